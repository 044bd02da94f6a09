use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::parts::*;
use crate::numerics::{Conv2d, ConvSpec, DenseTensor, Differentiable, Parameter, ParameterSet};
use crate::rope::{build_rope_table, RopeTable};
use crate::spatial_mixing::{BlockCache, SpatialBlockParams};
use rand::Rng;
use std::f64::consts::PI;

/// Six joint angles in radians.
pub type ActionVector = [f64; ACTION_DIM];

/// Finite entries with magnitude at most pi.
pub fn check_action(a: &ActionVector) -> Result<()> {
    for (i, &v) in a.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("joint {i} is {v}")));
        }
        if v.abs() > PI {
            return Err(Error::invalid(format!(
                "joint {i} = {v} exceeds pi in magnitude"
            )));
        }
    }
    Ok(())
}

/// Mean over coordinates of the squared difference.
pub fn mse_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != ACTION_DIM {
        return Err(Error::shape("prediction length", ACTION_DIM, a.len()));
    }
    if b.len() != ACTION_DIM {
        return Err(Error::shape("target length", ACTION_DIM, b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ACTION_DIM as f64)
}

/// Spatial mixing followed by channel mixing, each with a residual path.
#[derive(Clone, Debug, PartialEq)]
pub struct ArgnBlock {
    pub spatial: SpatialBlockParams,
    pub channel_mix: ChannelMixParams,
}

impl ParameterSet for ArgnBlock {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.spatial.visit(f);
        self.channel_mix.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.spatial.visit_mut(f);
        self.channel_mix.visit_mut(f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub blocks: Vec<ArgnBlock>,
    pub downsample: Conv2d,
    pub rope: RopeTable,
}

impl ParameterSet for Stage {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.blocks.visit(f);
        self.downsample.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.blocks.visit_mut(f);
        self.downsample.visit_mut(f);
    }
}

pub const BLOCKS_PER_STAGE: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    pub config: ModelConfig,
    pub stem: StemParams,
    pub stages: Vec<Stage>,
    pub fusion: FusionParams,
    pub head: HeadParams,
}

struct BlockTrace {
    spatial: BlockCache,
    mix: ChannelMixCache,
}

struct StageTrace {
    blocks: Vec<BlockTrace>,
    pre_down: DenseTensor,
}

/// Everything the reverse pass needs from one forward pass.
pub struct ForwardTrace {
    stem: StemCache,
    stages: Vec<StageTrace>,
    fusion: FusionCache,
    head: HeadCache,
}

impl ForwardTrace {
    /// Fingerprint of every kink side taken in this pass: SReLU signs,
    /// max-pool winners and key clamps.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.stem.hash_pattern(&mut h);
        for st in &self.stages {
            for b in &st.blocks {
                b.spatial.hash_pattern(&mut h);
                b.mix.hash_pattern(&mut h);
            }
        }
        h.finish()
    }
}

/// Feature maps produced along the way, for inspection.
#[derive(Clone, Debug)]
pub struct FeatureMaps {
    pub f0: DenseTensor,
    pub f1: DenseTensor,
    pub f2: DenseTensor,
    pub f3: DenseTensor,
    pub fused: DenseTensor,
    pub actions: DenseTensor,
}

impl PolicyModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let w = config.widths;
        let stem = StemParams::new(w[0], rng);
        let mut stages = Vec::with_capacity(3);
        for s in 0..3 {
            let (h, wd) = config.stage_extent(s);
            let opts = config.block_options(s);
            let blocks = (0..BLOCKS_PER_STAGE)
                .map(|b| {
                    let name = format!("stage{s}.block{b}");
                    ArgnBlock {
                        spatial: SpatialBlockParams::new(
                            &format!("{name}.spatial"),
                            w[s],
                            opts,
                            rng,
                        ),
                        channel_mix: ChannelMixParams::new(
                            &format!("{name}.channel_mix"),
                            w[s],
                            rng,
                        ),
                    }
                })
                .collect();
            let downsample = Conv2d::new(
                &format!("stage{s}.downsample"),
                ConvSpec::new(w[s], w[(s + 1) % 3], 3, 2),
                rng,
            );
            stages.push(Stage {
                blocks,
                downsample,
                rope: build_rope_table(h, wd, w[s])?,
            });
        }
        let fusion = FusionParams::new(w, rng);
        let head = HeadParams::new(w[0], config.fusion_extent(), config.head, rng);
        Ok(Self {
            config,
            stem,
            stages,
            fusion,
            head,
        })
    }

    /// Every learnable set to zero except the neutral affine scale and the
    /// fusion weights.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut m = Self::new(config, &mut rng)?;
        m.visit_mut(&mut |p| {
            if !p.name.ends_with("affine.scale") && p.name != "fusion.alpha" {
                p.value.data_mut().fill(0.0);
            }
        });
        Ok(m)
    }

    fn check_images(&self, x: &DenseTensor) -> Result<usize> {
        let (n, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::shape("image channels (axis 1)", 3, c));
        }
        if h != self.config.image_height {
            return Err(Error::shape(
                "image height (axis 2)",
                self.config.image_height,
                h,
            ));
        }
        if w != self.config.image_width {
            return Err(Error::shape(
                "image width (axis 3)",
                self.config.image_width,
                w,
            ));
        }
        if n == 0 {
            return Err(Error::invalid("empty image batch"));
        }
        Ok(n)
    }

    fn run(&self, images: &DenseTensor) -> Result<(FeatureMaps, ForwardTrace)> {
        self.check_images(images)?;
        let (f0, stem) = self.stem.forward(images)?;
        let mut x = f0.clone();
        let mut traces = Vec::with_capacity(3);
        let mut outs = Vec::with_capacity(3);
        for stage in &self.stages {
            let mut blocks = Vec::with_capacity(stage.blocks.len());
            for block in &stage.blocks {
                let (f_res, spatial) = block.spatial.forward(&x, &stage.rope)?;
                let (f_c0, mix) = block.channel_mix.forward(&f_res)?;
                x = f_res.add(&f_c0)?;
                blocks.push(BlockTrace { spatial, mix });
            }
            let pre_down = x;
            x = stage.downsample.forward(&pre_down)?;
            outs.push(x.clone());
            traces.push(StageTrace { blocks, pre_down });
        }
        let (fused, fusion) = self.fusion.forward(&outs[0], &outs[1], &outs[2])?;
        let (actions, head) = self.head.forward(&fused)?;
        actions.ensure_finite("policy output")?;
        let [f1, f2, f3]: [DenseTensor; 3] = outs.try_into().expect("three stages");
        Ok((
            FeatureMaps {
                f0,
                f1,
                f2,
                f3,
                fused,
                actions,
            },
            ForwardTrace {
                stem,
                stages: traces,
                fusion,
                head,
            },
        ))
    }

    /// Actions for a batch `[n, 3, H, W]`, returned as `[n, 6]`.
    pub fn forward(&self, images: &DenseTensor) -> Result<DenseTensor> {
        self.run(images).map(|(f, _)| f.actions)
    }

    pub fn features(&self, images: &DenseTensor) -> Result<FeatureMaps> {
        self.run(images).map(|(f, _)| f)
    }

    pub fn forward_traced(&self, images: &DenseTensor) -> Result<(DenseTensor, ForwardTrace)> {
        self.run(images).map(|(f, t)| (f.actions, t))
    }

    /// Accumulates parameter gradients for the output gradient `d_actions`.
    pub fn backward(&mut self, trace: &ForwardTrace, d_actions: &DenseTensor) -> Result<()> {
        let dff = self.head.backward(&trace.head, d_actions)?;
        let (df1, df2, df3) = self.fusion.backward(&trace.fusion, &dff)?;
        let mut carry: Option<DenseTensor> = None;
        for (s, d_out) in [df1, df2, df3].into_iter().enumerate().rev() {
            let stage = &mut self.stages[s];
            let st = &trace.stages[s];
            // F_{s+1} feeds both fusion and (for s < 2) the next stage.
            let mut d = d_out;
            if let Some(c) = carry.take() {
                d.axpy(1.0, &c)?;
            }
            let mut dx = stage.downsample.backward(&st.pre_down, &d)?;
            for (block, bt) in stage.blocks.iter_mut().zip(&st.blocks).rev() {
                let mut d_res = dx.clone();
                d_res.axpy(1.0, &block.channel_mix.backward(&bt.mix, &dx)?)?;
                dx = block.spatial.backward(&bt.spatial, &d_res, &stage.rope)?;
            }
            carry = Some(dx);
        }
        self.stem
            .backward(&trace.stem, &carry.expect("stage 0 gradient"))?;
        Ok(())
    }

    /// Mean squared error over a batch and its parameter gradients.
    pub fn loss_and_backward(
        &mut self,
        images: &DenseTensor,
        labels: &[ActionVector],
    ) -> Result<f64> {
        let (pred, trace) = self.forward_traced(images)?;
        let (loss, grad) = batch_mse(&pred, labels)?;
        self.backward(&trace, &grad)?;
        Ok(loss)
    }

    pub fn batch_loss(&self, images: &DenseTensor, labels: &[ActionVector]) -> Result<f64> {
        batch_mse(&self.forward(images)?, labels).map(|(l, _)| l)
    }
}

/// Loss averaged over samples and joints, plus its gradient.
pub fn batch_mse(pred: &DenseTensor, labels: &[ActionVector]) -> Result<(f64, DenseTensor)> {
    let n = labels.len();
    if pred.shape() != [n, ACTION_DIM] {
        return Err(Error::shape("prediction rows", n, pred.shape()[0]));
    }
    let scale = 1.0 / (n * ACTION_DIM) as f64;
    let mut loss = 0.0;
    let mut grad = DenseTensor::zeros(&[n, ACTION_DIM]);
    for (i, label) in labels.iter().enumerate() {
        for j in 0..ACTION_DIM {
            let d = pred.data()[i * ACTION_DIM + j] - label[j];
            loss += d * d;
            grad.data_mut()[i * ACTION_DIM + j] = 2.0 * d * scale;
        }
    }
    Ok((loss * scale, grad))
}

impl ParameterSet for PolicyModel {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.stem.visit(f);
        self.stages.visit(f);
        self.fusion.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.stem.visit_mut(f);
        self.stages.visit_mut(f);
        self.fusion.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// One image `[3, H, W]` (or a single-sample batch) to its predicted action.
pub fn predict(model: &PolicyModel, image: &DenseTensor) -> Result<ActionVector> {
    let batch = match image.rank() {
        3 => image
            .clone()
            .reshape(&[1, image.shape()[0], image.shape()[1], image.shape()[2]])?,
        4 if image.shape()[0] == 1 => image.clone(),
        _ => {
            return Err(Error::invalid(format!(
                "expected one image, got shape {:?}",
                image.shape()
            )))
        }
    };
    let y = model.forward(&batch)?;
    let mut a = [0.0; ACTION_DIM];
    a.copy_from_slice(y.data());
    Ok(a)
}

/// A model paired with a fixed batch; the loss is the batch MSE.
pub struct SupervisedLoss {
    pub model: PolicyModel,
    pub images: DenseTensor,
    pub labels: Vec<ActionVector>,
}

impl ParameterSet for SupervisedLoss {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.model.visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.model.visit_mut(f)
    }
}

impl Differentiable for SupervisedLoss {
    fn loss(&self) -> Result<f64> {
        self.model.batch_loss(&self.images, &self.labels)
    }
    fn loss_and_gradients(&mut self) -> Result<f64> {
        self.model.zero_grad();
        self.model.loss_and_backward(&self.images, &self.labels)
    }
    fn loss_with_pattern(&self) -> Result<(f64, Option<u64>)> {
        let (pred, trace) = self.model.forward_traced(&self.images)?;
        let (loss, _) = batch_mse(&pred, &self.labels)?;
        Ok((loss, Some(trace.activation_pattern())))
    }
}

/// Coarse parameter group of a parameter name, for reporting.
pub fn parameter_group(name: &str) -> &'static str {
    if name.starts_with("stem") {
        "stem"
    } else if name.contains(".adm_conv") {
        "adm"
    } else if name.contains(".k_proj") || name.contains(".v_proj") || name.contains(".r_proj") {
        "kvr"
    } else if name.ends_with(".u_raw") {
        "u"
    } else if name.contains(".gate_conv1") {
        "gate"
    } else if name.contains(".channel_mix") {
        "channel_mix"
    } else if name.contains(".downsample") {
        "downsample"
    } else if name == "fusion.alpha" {
        "fusion_alpha"
    } else if name.starts_with("fusion") {
        "fusion_conv"
    } else {
        "head"
    }
}
