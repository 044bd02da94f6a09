//! Stem, channel mixing, multi-scale fusion and the action head.

use crate::error::{Error, Result};
use crate::model::config::HeadReduction;
use crate::numerics::*;
use rand::Rng;

/// Number of joints regressed by the head.
pub const ACTION_DIM: usize = 6;

/// `conv3x3/2 -> per-channel affine -> srelu -> maxpool 2x2`.
#[derive(Clone, Debug, PartialEq)]
pub struct StemParams {
    pub conv: Conv2d,
    pub affine: ChannelAffine,
}

#[derive(Clone, Debug)]
pub struct StemCache {
    x: DenseTensor,
    conv: DenseTensor,
    affine: DenseTensor,
    act_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl StemCache {
    pub(crate) fn hash_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        hash_threshold(h, self.affine.data(), 0.0);
        for &i in &self.argmax {
            h.write_usize(i);
        }
    }
}

impl StemParams {
    pub fn new<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new("stem.conv", ConvSpec::new(3, width, 3, 2), rng),
            affine: ChannelAffine::new("stem.affine", width),
        }
    }

    pub fn zeros(width: usize) -> Self {
        Self {
            conv: Conv2d::zeros("stem.conv", ConvSpec::new(3, width, 3, 2)),
            affine: ChannelAffine::new("stem.affine", width),
        }
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<(DenseTensor, StemCache)> {
        let (_, _, h, w) = x.dims4()?;
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "image extents {h}x{w} must be positive multiples of 4"
            )));
        }
        let conv = self.conv.forward(x)?;
        let affine = self.affine.forward(&conv)?;
        let act = activation(&affine, Activation::Srelu);
        let (y, argmax) = max_pool2x2(&act)?;
        let cache = StemCache {
            x: x.clone(),
            conv,
            affine,
            act_shape: act.shape().to_vec(),
            argmax,
        };
        Ok((y, cache))
    }

    pub fn backward(&mut self, cache: &StemCache, dy: &DenseTensor) -> Result<DenseTensor> {
        let dact = max_pool2x2_backward(dy, &cache.argmax, &cache.act_shape)?;
        let daff = cache.affine.zip_map(&dact, |x, g| 2.0 * x.max(0.0) * g)?;
        let dconv = self.affine.backward(&cache.conv, &daff)?;
        self.conv.backward(&cache.x, &dconv)
    }

    /// Sets the affine so the conv response over `images` has per-channel
    /// mean 0 and standard deviation `target_std`.
    pub fn calibrate(&mut self, images: &DenseTensor, target_std: f64) -> Result<()> {
        let z = self.conv.forward(images)?;
        let (n, c, h, w) = z.dims4()?;
        let plane = h * w;
        let count = (n * plane) as f64;
        for ch in 0..c {
            let vals = (0..n).flat_map(|s| z.data()[(s * c + ch) * plane..][..plane].iter());
            let mean = vals.clone().sum::<f64>() / count;
            let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / count;
            let std = var.sqrt();
            if std > 1e-12 {
                self.affine.scale.value.data_mut()[ch] = target_std / std;
                self.affine.shift.value.data_mut()[ch] = -target_std * mean / std;
            }
        }
        Ok(())
    }
}

/// `maxpool2x2(srelu(affine(conv3x3_s2(image))))`: extents drop by 4.
pub fn stem(image: &DenseTensor, p: &StemParams) -> Result<DenseTensor> {
    p.forward(image).map(|(y, _)| y)
}

impl ParameterSet for StemParams {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.conv.visit(f);
        self.affine.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.conv.visit_mut(f);
        self.affine.visit_mut(f);
    }
}

/// `sigmoid(conv1x1(x)) * srelu(conv3x3(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMixParams {
    pub cm_conv3: Conv2d,
    pub cm_conv1: Conv2d,
}

#[derive(Clone, Debug)]
pub struct ChannelMixCache {
    x: DenseTensor,
    gate: DenseTensor,
    pre3: DenseTensor,
    act3: DenseTensor,
}

impl ChannelMixCache {
    pub(crate) fn hash_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        hash_threshold(h, self.pre3.data(), 0.0);
    }
}

impl ChannelMixParams {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, rng: &mut R) -> Self {
        Self {
            cm_conv3: Conv2d::new(
                &format!("{name}.cm_conv3"),
                ConvSpec::new(channels, channels, 3, 1),
                rng,
            ),
            cm_conv1: Conv2d::new(
                &format!("{name}.cm_conv1"),
                ConvSpec::new(channels, channels, 1, 1),
                rng,
            ),
        }
    }

    pub fn zeros(name: &str, channels: usize) -> Self {
        Self {
            cm_conv3: Conv2d::zeros(
                &format!("{name}.cm_conv3"),
                ConvSpec::new(channels, channels, 3, 1),
            ),
            cm_conv1: Conv2d::zeros(
                &format!("{name}.cm_conv1"),
                ConvSpec::new(channels, channels, 1, 1),
            ),
        }
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<(DenseTensor, ChannelMixCache)> {
        let gate = activation(&self.cm_conv1.forward(x)?, Activation::Sigmoid);
        let pre3 = self.cm_conv3.forward(x)?;
        let act3 = activation(&pre3, Activation::Srelu);
        let y = gate.mul(&act3)?;
        Ok((
            y,
            ChannelMixCache {
                x: x.clone(),
                gate,
                pre3,
                act3,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ChannelMixCache, dy: &DenseTensor) -> Result<DenseTensor> {
        let dgate = dy.mul(&cache.act3)?;
        let dpre1 = activation_backward(&cache.gate, &cache.gate, &dgate, Activation::Sigmoid)?;
        let dact3 = dy.mul(&cache.gate)?;
        let dpre3 = activation_backward(&cache.pre3, &cache.act3, &dact3, Activation::Srelu)?;
        let mut dx = self.cm_conv1.backward(&cache.x, &dpre1)?;
        dx.axpy(1.0, &self.cm_conv3.backward(&cache.x, &dpre3)?)?;
        Ok(dx)
    }
}

impl ParameterSet for ChannelMixParams {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.cm_conv3.visit(f);
        self.cm_conv1.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.cm_conv3.visit_mut(f);
        self.cm_conv1.visit_mut(f);
    }
}

pub fn channel_mixing(f_res: &DenseTensor, p: &ChannelMixParams) -> Result<DenseTensor> {
    p.forward(f_res).map(|(y, _)| y)
}

/// `alpha1 * conv1x1(F1) + alpha2 * conv1x1(up2(F2)) + alpha3 * up4(F3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub f1: Conv2d,
    pub f2: Conv2d,
    /// `[alpha1, alpha2, alpha3]`
    pub alpha: Parameter,
}

#[derive(Clone, Debug)]
pub struct FusionCache {
    f1: DenseTensor,
    f2_shape: Vec<usize>,
    f3_shape: Vec<usize>,
    up2: DenseTensor,
    up3: DenseTensor,
    b1: DenseTensor,
    b2: DenseTensor,
}

impl FusionParams {
    /// `widths = [w1, w2, w3]`; `F1` has `w2` channels, `F2` has `w3`, `F3` has `w1`.
    pub fn new<R: Rng + ?Sized>(widths: [usize; 3], rng: &mut R) -> Self {
        Self {
            f1: Conv2d::new("fusion.f1", ConvSpec::new(widths[1], widths[0], 1, 1), rng),
            f2: Conv2d::new("fusion.f2", ConvSpec::new(widths[2], widths[0], 1, 1), rng),
            alpha: Parameter::new("fusion.alpha", DenseTensor::full(&[3], 1.0 / 3.0)),
        }
    }

    pub fn zeros(widths: [usize; 3]) -> Self {
        Self {
            f1: Conv2d::zeros("fusion.f1", ConvSpec::new(widths[1], widths[0], 1, 1)),
            f2: Conv2d::zeros("fusion.f2", ConvSpec::new(widths[2], widths[0], 1, 1)),
            alpha: Parameter::new("fusion.alpha", DenseTensor::full(&[3], 1.0 / 3.0)),
        }
    }

    fn check(&self, f1: &DenseTensor, f2: &DenseTensor, f3: &DenseTensor) -> Result<()> {
        let (n1, _, h1, w1) = f1.dims4()?;
        let (n2, _, h2, w2) = f2.dims4()?;
        let (n3, c3, h3, w3) = f3.dims4()?;
        if n1 != n2 || n1 != n3 {
            return Err(Error::shape("fusion batch (axis 0)", n1, n2.max(n3)));
        }
        if h2 * 2 != h1 || w2 * 2 != w1 {
            return Err(Error::invalid(format!(
                "F2 extents {h2}x{w2} do not upsample by 2 to F1 extents {h1}x{w1}"
            )));
        }
        if h3 * 4 != h1 || w3 * 4 != w1 {
            return Err(Error::invalid(format!(
                "F3 extents {h3}x{w3} do not upsample by 4 to F1 extents {h1}x{w1}"
            )));
        }
        if c3 != self.f1.spec.out_channels {
            return Err(Error::shape(
                "F3 channels (axis 1)",
                self.f1.spec.out_channels,
                c3,
            ));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        f1: &DenseTensor,
        f2: &DenseTensor,
        f3: &DenseTensor,
    ) -> Result<(DenseTensor, FusionCache)> {
        self.check(f1, f2, f3)?;
        let a = self.alpha.value.data();
        let b1 = self.f1.forward(f1)?;
        let up2 = bilinear_upsample(f2, 2)?;
        let b2 = self.f2.forward(&up2)?;
        let up3 = bilinear_upsample(f3, 4)?;
        let mut y = b1.scale(a[0]);
        y.axpy(a[1], &b2)?;
        y.axpy(a[2], &up3)?;
        let cache = FusionCache {
            f1: f1.clone(),
            f2_shape: f2.shape().to_vec(),
            f3_shape: f3.shape().to_vec(),
            up2,
            up3,
            b1,
            b2,
        };
        Ok((y, cache))
    }

    /// Returns the gradients for `(F1, F2, F3)`.
    pub fn backward(
        &mut self,
        cache: &FusionCache,
        dy: &DenseTensor,
    ) -> Result<(DenseTensor, DenseTensor, DenseTensor)> {
        let a = self.alpha.value.data().to_vec();
        self.alpha
            .accumulate(&[dy.dot(&cache.b1)?, dy.dot(&cache.b2)?, dy.dot(&cache.up3)?]);
        let df1 = self.f1.backward(&cache.f1, &dy.scale(a[0]))?;
        let dup2 = self.f2.backward(&cache.up2, &dy.scale(a[1]))?;
        let df2 = bilinear_upsample_backward(&dup2, &cache.f2_shape, 2)?;
        let df3 = bilinear_upsample_backward(&dy.scale(a[2]), &cache.f3_shape, 4)?;
        Ok((df1, df2, df3))
    }
}

impl ParameterSet for FusionParams {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.f1.visit(f);
        self.f2.visit(f);
        f(&self.alpha);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.f1.visit_mut(f);
        self.f2.visit_mut(f);
        f(&mut self.alpha);
    }
}

pub fn fuse_multiscale(
    f1: &DenseTensor,
    f2: &DenseTensor,
    f3: &DenseTensor,
    p: &FusionParams,
) -> Result<DenseTensor> {
    p.forward(f1, f2, f3).map(|(y, _)| y)
}

/// `linear(reduce(conv3x3(F_f)))` with six outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub conv: Conv2d,
    pub linear: Linear,
    pub reduction: HeadReduction,
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    ff: DenseTensor,
    conv_shape: Vec<usize>,
    features: DenseTensor,
}

impl HeadParams {
    /// `extent` is the spatial size of the fused map.
    pub fn new<R: Rng + ?Sized>(
        width: usize,
        extent: (usize, usize),
        reduction: HeadReduction,
        rng: &mut R,
    ) -> Self {
        let features = match reduction {
            HeadReduction::Flatten => width * extent.0 * extent.1,
            HeadReduction::AveragePool => width,
        };
        Self {
            conv: Conv2d::new("head.conv", ConvSpec::new(width, width, 3, 1), rng),
            linear: Linear::new("head.linear", features, ACTION_DIM, rng),
            reduction,
        }
    }

    pub fn forward(&self, ff: &DenseTensor) -> Result<(DenseTensor, HeadCache)> {
        if ff.is_empty() {
            return Err(Error::invalid("fused feature map is empty"));
        }
        let h = self.conv.forward(ff)?;
        let n = h.shape()[0];
        let features = match self.reduction {
            HeadReduction::Flatten => {
                let per = h.len() / n;
                h.clone().reshape(&[n, per])?
            }
            HeadReduction::AveragePool => global_avg_pool(&h)?,
        };
        let y = self.linear.forward(&features)?;
        Ok((
            y,
            HeadCache {
                ff: ff.clone(),
                conv_shape: h.shape().to_vec(),
                features,
            },
        ))
    }

    pub fn backward(&mut self, cache: &HeadCache, dy: &DenseTensor) -> Result<DenseTensor> {
        let dfeat = self.linear.backward(&cache.features, dy)?;
        let dh = match self.reduction {
            HeadReduction::Flatten => dfeat.reshape(&cache.conv_shape)?,
            HeadReduction::AveragePool => global_avg_pool_backward(&dfeat, &cache.conv_shape)?,
        };
        self.conv.backward(&cache.ff, &dh)
    }
}

impl ParameterSet for HeadParams {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.conv.visit(f);
        self.linear.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.conv.visit_mut(f);
        self.linear.visit_mut(f);
    }
}

/// Head output `[n, 6]`.
pub fn action_head(ff: &DenseTensor, p: &HeadParams) -> Result<DenseTensor> {
    p.forward(ff).map(|(y, _)| y)
}
