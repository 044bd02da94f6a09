use crate::error::{Error, Result};
use crate::spatial_mixing::{BlockOptions, DecayMode, InitMode, KeyMap};
use serde::{Deserialize, Serialize};

/// Spatial reduction between the head convolution and the final linear layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadReduction {
    /// Row-major flatten of the whole head map.
    #[default]
    Flatten,
    /// Global average over space.
    AveragePool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient descent, `theta -= lr * grad`.
    Sgd,
}

/// Architecture of a policy network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    /// Channel widths of the three stages.
    pub widths: [usize; 3],
    /// Upper bound on the scan patch size; each stage uses the largest size
    /// not above it that divides both of its extents.
    pub patch: usize,
    pub key_map: KeyMap,
    pub decay: DecayMode,
    pub init: InitMode,
    pub head: HeadReduction,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_height: 128,
            image_width: 128,
            widths: [32, 64, 128],
            patch: 8,
            key_map: KeyMap::Exp,
            decay: DecayMode::PerStep,
            init: InitMode::K,
            head: HeadReduction::Flatten,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.image_height, self.image_width);
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::invalid(format!(
                "image extents {h}x{w} must be positive multiples of 32"
            )));
        }
        for (i, &c) in self.widths.iter().enumerate() {
            if c < 2 || c % 2 != 0 {
                return Err(Error::invalid(format!(
                    "stage {} width must be even and at least 2, got {c}",
                    i + 1
                )));
            }
        }
        if self.patch == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        Ok(())
    }

    /// Spatial extents at which stage `i` (0-based) runs: `H / 2^(i+2)`.
    pub fn stage_extent(&self, i: usize) -> (usize, usize) {
        let f = 4 << i;
        (self.image_height / f, self.image_width / f)
    }

    pub fn stage_patch(&self, i: usize) -> usize {
        let (h, w) = self.stage_extent(i);
        (1..=self.patch.min(h).min(w))
            .rev()
            .find(|p| h % p == 0 && w % p == 0)
            .unwrap_or(1)
    }

    pub fn block_options(&self, stage: usize) -> BlockOptions {
        BlockOptions {
            patch: self.stage_patch(stage),
            key_map: self.key_map,
            decay: self.decay,
            init: self.init,
        }
    }

    /// Extents of the fused map (and of `F1`): `H / 8`.
    pub fn fusion_extent(&self) -> (usize, usize) {
        (self.image_height / 8, self.image_width / 8)
    }

    pub fn head_features(&self) -> usize {
        let (h, w) = self.fusion_extent();
        match self.head {
            HeadReduction::Flatten => self.widths[0] * h * w,
            HeadReduction::AveragePool => self.widths[0],
        }
    }
}

/// Everything that controls a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Set the stem affine from training-set statistics before the first step.
    pub calibrate_stem: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 1e-3,
            batch_size: 8,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            calibrate_stem: true,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        self.model.validate()
    }
}
