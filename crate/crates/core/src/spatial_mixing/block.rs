use crate::error::{Error, Result};
use crate::numerics::{
    activation, activation_backward, hash_threshold, sigmoid, Activation, Conv2d, ConvSpec,
    DenseTensor, Parameter, ParameterSet,
};
use crate::rope::{apply_rope, apply_rope_backward, RopeTable};
use crate::spatial_mixing::scan::{wkv_scan_backward, wkv_scan_cached, InitMode, ScanCache};
use crate::spatial_mixing::{slice_patches, unslice_patches, PatchSequence};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Map applied to the rotated key projection before the scan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMap {
    /// Keys used as projected (sign unconstrained).
    Identity,
    /// `k = exp(min(K, KEY_EXP_CAP))`, strictly positive.
    #[default]
    Exp,
}

pub const KEY_EXP_CAP: f64 = 30.0;

/// How the decay map is consumed by the scan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// Step `i` uses its own patch of the decay map.
    #[default]
    PerStep,
    /// The decay map is averaged over space per channel.
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockOptions {
    pub patch: usize,
    pub key_map: KeyMap,
    pub decay: DecayMode,
    pub init: InitMode,
}

impl BlockOptions {
    pub fn with_patch(patch: usize) -> Self {
        Self {
            patch,
            key_map: KeyMap::default(),
            decay: DecayMode::default(),
            init: InitMode::default(),
        }
    }
}

/// Learnables of one spatial mixing block.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialBlockParams {
    pub adm_conv3: Conv2d,
    pub adm_conv1: Conv2d,
    pub k_proj: Conv2d,
    pub v_proj: Conv2d,
    pub r_proj: Conv2d,
    /// Per-channel, pre-sigmoid.
    pub u_raw: Parameter,
    pub gate_conv1: Conv2d,
    pub options: BlockOptions,
}

impl SpatialBlockParams {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        channels: usize,
        options: BlockOptions,
        rng: &mut R,
    ) -> Self {
        let c3 = ConvSpec::new(channels, channels, 3, 1);
        let c1 = ConvSpec::new(channels, channels, 1, 1);
        Self {
            adm_conv3: Conv2d::new(&format!("{name}.adm_conv3"), c3, rng),
            adm_conv1: Conv2d::new(&format!("{name}.adm_conv1"), c1, rng),
            k_proj: Conv2d::new(&format!("{name}.k_proj"), c1, rng),
            v_proj: Conv2d::new(&format!("{name}.v_proj"), c1, rng),
            r_proj: Conv2d::new(&format!("{name}.r_proj"), c1, rng),
            u_raw: Parameter::zeros(format!("{name}.u_raw"), &[channels]),
            gate_conv1: Conv2d::new(&format!("{name}.gate_conv1"), c1, rng),
            options,
        }
    }

    pub fn zeros(name: &str, channels: usize, options: BlockOptions) -> Self {
        let c3 = ConvSpec::new(channels, channels, 3, 1);
        let c1 = ConvSpec::new(channels, channels, 1, 1);
        Self {
            adm_conv3: Conv2d::zeros(&format!("{name}.adm_conv3"), c3),
            adm_conv1: Conv2d::zeros(&format!("{name}.adm_conv1"), c1),
            k_proj: Conv2d::zeros(&format!("{name}.k_proj"), c1),
            v_proj: Conv2d::zeros(&format!("{name}.v_proj"), c1),
            r_proj: Conv2d::zeros(&format!("{name}.r_proj"), c1),
            u_raw: Parameter::zeros(format!("{name}.u_raw"), &[channels]),
            gate_conv1: Conv2d::zeros(&format!("{name}.gate_conv1"), c1),
            options,
        }
    }

    pub fn channels(&self) -> usize {
        self.u_raw.len()
    }

    /// Effective position compensation `sigmoid(u_raw)`.
    pub fn u(&self) -> Vec<f64> {
        self.u_raw
            .value
            .data()
            .iter()
            .map(|&x| sigmoid(x))
            .collect()
    }

    fn check_input(&self, f0: &DenseTensor) -> Result<()> {
        let (_, c, _, _) = f0.dims4()?;
        if c != self.channels() {
            return Err(Error::shape("block channels (axis 1)", self.channels(), c));
        }
        Ok(())
    }
}

impl ParameterSet for SpatialBlockParams {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.adm_conv3.visit(f);
        self.adm_conv1.visit(f);
        self.k_proj.visit(f);
        self.v_proj.visit(f);
        self.r_proj.visit(f);
        f(&self.u_raw);
        self.gate_conv1.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.adm_conv3.visit_mut(f);
        self.adm_conv1.visit_mut(f);
        self.k_proj.visit_mut(f);
        self.v_proj.visit_mut(f);
        self.r_proj.visit_mut(f);
        f(&mut self.u_raw);
        self.gate_conv1.visit_mut(f);
    }
}

/// Content-adaptive decay map `sigmoid(conv1x1(srelu(conv3x3(F0))))`.
pub fn adm_decay(f0: &DenseTensor, p: &SpatialBlockParams) -> Result<DenseTensor> {
    p.check_input(f0)?;
    let a3 = p.adm_conv3.forward(f0)?;
    let a1 = p.adm_conv1.forward(&activation(&a3, Activation::Srelu))?;
    Ok(activation(&a1, Activation::Sigmoid))
}

/// Key, value and receptance projections of `F0`.
pub fn project_kvr(
    f0: &DenseTensor,
    p: &SpatialBlockParams,
) -> Result<(DenseTensor, DenseTensor, DenseTensor)> {
    p.check_input(f0)?;
    Ok((
        p.k_proj.forward(f0)?,
        p.v_proj.forward(f0)?,
        p.r_proj.forward(f0)?,
    ))
}

pub fn apply_key_map(k: &DenseTensor, map: KeyMap) -> DenseTensor {
    match map {
        KeyMap::Identity => k.clone(),
        KeyMap::Exp => k.map(|x| x.min(KEY_EXP_CAP).exp()),
    }
}

/// Spatial mean per channel, broadcast back over the map.
fn share_decay(w: &DenseTensor) -> Result<DenseTensor> {
    let (_, _, h, wd) = w.dims4()?;
    let mut out = w.clone();
    for plane in out.data_mut().chunks_mut(h * wd) {
        let mean = plane.iter().sum::<f64>() / plane.len() as f64;
        plane.fill(mean);
    }
    Ok(out)
}

/// Full block: decay, projections, rotary keys/values, patch scan and the
/// gated residual. Returns `F0 + sigmoid(gate(R)) * WKV`.
pub fn spatial_block_forward(
    f0: &DenseTensor,
    p: &SpatialBlockParams,
    table: &RopeTable,
) -> Result<DenseTensor> {
    p.forward(f0, table).map(|(y, _)| y)
}

/// Values retained from the forward pass of one block.
#[derive(Clone, Debug)]
pub struct BlockCache {
    f0: DenseTensor,
    a3: DenseTensor,
    s3: DenseTensor,
    decay: DenseTensor,
    r: DenseTensor,
    k_rot: DenseTensor,
    k_seq: PatchSequence,
    v_seq: PatchSequence,
    w_seq: PatchSequence,
    scan: ScanCache,
    wkv: DenseTensor,
    gate: DenseTensor,
}

impl BlockCache {
    pub(crate) fn hash_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        hash_threshold(h, self.a3.data(), 0.0);
        hash_threshold(h, self.k_rot.data(), KEY_EXP_CAP);
    }
}

impl SpatialBlockParams {
    pub fn forward(
        &self,
        f0: &DenseTensor,
        table: &RopeTable,
    ) -> Result<(DenseTensor, BlockCache)> {
        self.check_input(f0)?;
        let opts = self.options;
        let a3 = self.adm_conv3.forward(f0)?;
        let s3 = activation(&a3, Activation::Srelu);
        let decay = activation(&self.adm_conv1.forward(&s3)?, Activation::Sigmoid);
        let w_eff = match opts.decay {
            DecayMode::PerStep => decay.clone(),
            DecayMode::Shared => share_decay(&decay)?,
        };
        let (k, v, r) = project_kvr(f0, self)?;
        let k_rot = apply_rope(&k, table)?;
        let v_rot = apply_rope(&v, table)?;
        let keys = apply_key_map(&k_rot, opts.key_map);
        let k_seq = slice_patches(&keys, opts.patch)?;
        let v_seq = slice_patches(&v_rot, opts.patch)?;
        let w_seq = slice_patches(&w_eff, opts.patch)?;
        let (y_seq, scan) = wkv_scan_cached(&k_seq, &v_seq, &w_seq, &self.u(), opts.init)?;
        let wkv = unslice_patches(&y_seq)?;
        let gate = activation(&self.gate_conv1.forward(&r)?, Activation::Sigmoid);
        let mut out = f0.clone();
        for ((o, g), x) in out.data_mut().iter_mut().zip(gate.data()).zip(wkv.data()) {
            *o += g * x;
        }
        let cache = BlockCache {
            f0: f0.clone(),
            a3,
            s3,
            decay,
            r,
            k_rot,
            k_seq,
            v_seq,
            w_seq,
            scan,
            wkv,
            gate,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. `F0`.
    pub fn backward(
        &mut self,
        cache: &BlockCache,
        dy: &DenseTensor,
        table: &RopeTable,
    ) -> Result<DenseTensor> {
        cache.f0.check_same_shape(dy, "block output gradient")?;
        let f0 = &cache.f0;
        let mut df0 = dy.clone();

        // gate branch
        let dgate = dy.mul(&cache.wkv)?;
        let dgate_pre = activation_backward(&cache.gate, &cache.gate, &dgate, Activation::Sigmoid)?;
        let dr = self.gate_conv1.backward(&cache.r, &dgate_pre)?;
        df0.axpy(1.0, &self.r_proj.backward(f0, &dr)?)?;

        // scan branch
        let dwkv = dy.mul(&cache.gate)?;
        let dy_seq = slice_patches(&dwkv, self.options.patch)?;
        let u = self.u();
        let g = wkv_scan_backward(
            &cache.k_seq,
            &cache.v_seq,
            &cache.w_seq,
            &u,
            &cache.scan,
            &dy_seq,
        )?;
        let du_raw: Vec<f64> =
            g.u.iter()
                .zip(&u)
                .map(|(gu, s)| gu * s * (1.0 - s))
                .collect();
        self.u_raw.accumulate(&du_raw);

        let dkeys = unslice_patches(&g.k)?;
        let dk_rot = match self.options.key_map {
            KeyMap::Identity => dkeys,
            KeyMap::Exp => {
                cache.k_rot.zip_map(
                    &dkeys,
                    |x, gk| {
                        if x < KEY_EXP_CAP {
                            x.exp() * gk
                        } else {
                            0.0
                        }
                    },
                )?
            }
        };
        let dk = apply_rope_backward(&dk_rot, table)?;
        df0.axpy(1.0, &self.k_proj.backward(f0, &dk)?)?;
        let dv = apply_rope_backward(&unslice_patches(&g.v)?, table)?;
        df0.axpy(1.0, &self.v_proj.backward(f0, &dv)?)?;

        // decay branch
        let mut dw = unslice_patches(&g.w)?;
        if self.options.decay == DecayMode::Shared {
            dw = share_decay(&dw)?;
        }
        let da1 = activation_backward(&cache.decay, &cache.decay, &dw, Activation::Sigmoid)?;
        let ds3 = self.adm_conv1.backward(&cache.s3, &da1)?;
        let da3 = activation_backward(&cache.a3, &cache.s3, &ds3, Activation::Srelu)?;
        df0.axpy(1.0, &self.adm_conv3.backward(f0, &da3)?)?;
        Ok(df0)
    }
}
