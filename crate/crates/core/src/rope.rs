//! Two-dimensional rotary position embedding over `(n, c, h, w)` feature maps.
//!
//! Channel pair `(2j, 2j+1)` at position `(h, w)` is rotated by
//! `theta_j * h + theta_j * w`, `theta_j = 10000^(-2j/C)`. Positions with the
//! same `h + w` therefore receive the same rotation.

use crate::error::{Error, Result};
use crate::numerics::DenseTensor;

pub const ROPE_BASE: f64 = 10000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RopeTable {
    height: usize,
    width: usize,
    channels: usize,
    /// `[h, w, c/2]`
    angles: DenseTensor,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

pub fn frequency(j: usize, channels: usize) -> f64 {
    1.0 / ROPE_BASE.powf(2.0 * j as f64 / channels as f64)
}

pub fn build_rope_table(height: usize, width: usize, channels: usize) -> Result<RopeTable> {
    if channels < 2 || channels % 2 != 0 {
        return Err(Error::invalid(format!(
            "channel pairing requires even C >= 2, got {channels}"
        )));
    }
    let pairs = channels / 2;
    let freqs: Vec<f64> = (0..pairs).map(|j| frequency(j, channels)).collect();
    let angles = DenseTensor::from_fn(&[height, width, pairs], |i| {
        let j = i % pairs;
        let w = (i / pairs) % width;
        let h = i / (pairs * width);
        freqs[j] * h as f64 + freqs[j] * w as f64
    });
    let cos = angles.data().iter().map(|a| a.cos()).collect();
    let sin = angles.data().iter().map(|a| a.sin()).collect();
    Ok(RopeTable {
        height,
        width,
        channels,
        angles,
        cos,
        sin,
    })
}

impl RopeTable {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn angle(&self, h: usize, w: usize, j: usize) -> f64 {
        self.angles.data()[(h * self.width + w) * (self.channels / 2) + j]
    }

    pub fn angles(&self) -> &DenseTensor {
        &self.angles
    }

    fn check(&self, x: &DenseTensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(Error::shape("rope channels (axis 1)", self.channels, c));
        }
        if h != self.height {
            return Err(Error::shape("rope height (axis 2)", self.height, h));
        }
        if w != self.width {
            return Err(Error::shape("rope width (axis 3)", self.width, w));
        }
        Ok(())
    }

    fn rotate(&self, x: &DenseTensor, direction: f64) -> Result<DenseTensor> {
        self.check(x)?;
        let plane = self.height * self.width;
        let pairs = self.channels / 2;
        let mut y = x.clone();
        for sample in y.data_mut().chunks_mut(self.channels * plane) {
            for j in 0..pairs {
                let (lo, hi) = sample[2 * j * plane..(2 * j + 2) * plane].split_at_mut(plane);
                for p in 0..plane {
                    let c = self.cos[p * pairs + j];
                    let s = direction * self.sin[p * pairs + j];
                    let (a, b) = (lo[p], hi[p]);
                    lo[p] = c * a - s * b;
                    hi[p] = s * a + c * b;
                }
            }
        }
        Ok(y)
    }
}

pub fn apply_rope(x: &DenseTensor, table: &RopeTable) -> Result<DenseTensor> {
    table.rotate(x, 1.0)
}

/// Transpose of [`apply_rope`] (rotation by the negated angle).
pub fn apply_rope_backward(dy: &DenseTensor, table: &RopeTable) -> Result<DenseTensor> {
    table.rotate(dy, -1.0)
}
