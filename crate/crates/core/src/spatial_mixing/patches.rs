use crate::error::{Error, Result};
use crate::numerics::DenseTensor;

/// A batch of patch sequences. Each patch flattens a `p x p` window of all
/// channels in `(channel, row, column)` order; patches run row-major over the
/// patch grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    /// `[batch][patch index][channels * patch * patch]`
    pub data: Vec<f64>,
}

impl PatchSequence {
    /// Builds a sequence directly from `[batch][count][len]` data with a
    /// `1 x count` patch grid (useful for scan-level tests).
    pub fn from_steps(
        batch: usize,
        count: usize,
        channels: usize,
        patch: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let len = channels * patch * patch;
        if data.len() != batch * count * len {
            return Err(Error::shape(
                "patch data length",
                batch * count * len,
                data.len(),
            ));
        }
        Ok(Self {
            batch,
            channels,
            height: patch,
            width: patch * count,
            patch,
            data,
        })
    }

    pub fn count(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Entries per patch.
    pub fn patch_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.batch == other.batch
            && self.channels == other.channels
            && self.height == other.height
            && self.width == other.width
            && self.patch == other.patch
    }

    pub fn step(&self, sample: usize, i: usize) -> &[f64] {
        let len = self.patch_len();
        let at = (sample * self.count() + i) * len;
        &self.data[at..at + len]
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            data,
            ..self.clone()
        }
    }
}

fn check_divisible(h: usize, w: usize, patch: usize) -> Result<()> {
    if patch == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    if h % patch != 0 || w % patch != 0 {
        return Err(Error::invalid(format!(
            "spatial extents {h}x{w} must be divisible by the patch size {patch}"
        )));
    }
    Ok(())
}

pub fn slice_patches(x: &DenseTensor, patch: usize) -> Result<PatchSequence> {
    let (n, c, h, w) = x.dims4()?;
    check_divisible(h, w, patch)?;
    let (gh, gw) = (h / patch, w / patch);
    let mut data = Vec::with_capacity(x.len());
    let src = x.data();
    for s in 0..n {
        for by in 0..gh {
            for bx in 0..gw {
                for ch in 0..c {
                    let plane = &src[(s * c + ch) * h * w..][..h * w];
                    for py in 0..patch {
                        let row = (by * patch + py) * w + bx * patch;
                        data.extend_from_slice(&plane[row..row + patch]);
                    }
                }
            }
        }
    }
    Ok(PatchSequence {
        batch: n,
        channels: c,
        height: h,
        width: w,
        patch,
        data,
    })
}

pub fn unslice_patches(seq: &PatchSequence) -> Result<DenseTensor> {
    let (n, c, h, w, p) = (seq.batch, seq.channels, seq.height, seq.width, seq.patch);
    check_divisible(h, w, p)?;
    let mut out = DenseTensor::zeros(&[n, c, h, w]);
    let (gh, gw) = (h / p, w / p);
    let dst = out.data_mut();
    let mut at = 0;
    for s in 0..n {
        for by in 0..gh {
            for bx in 0..gw {
                for ch in 0..c {
                    let plane = &mut dst[(s * c + ch) * h * w..][..h * w];
                    for py in 0..p {
                        let row = (by * p + py) * w + bx * p;
                        plane[row..row + p].copy_from_slice(&seq.data[at..at + p]);
                        at += p;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let x = DenseTensor::from_fn(&[2, 3, 8, 12], |i| i as f64 * 0.5 - 7.0);
        for p in [1, 2, 4] {
            let seq = slice_patches(&x, p).unwrap();
            assert_eq!(seq.count(), 96 / (p * p));
            assert_eq!(unslice_patches(&seq).unwrap(), x);
        }
    }

    #[test]
    fn order_is_row_major_over_grid() {
        // 1 channel, 4x4, patch 2: patch 1 is the top-right window.
        let x = DenseTensor::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let seq = slice_patches(&x, 2).unwrap();
        assert_eq!(seq.step(0, 0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(seq.step(0, 1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(seq.step(0, 2), &[8.0, 9.0, 12.0, 13.0]);
    }

    #[test]
    fn indivisible_extent_rejected() {
        let err = slice_patches(&DenseTensor::zeros(&[1, 1, 6, 8]), 4).unwrap_err();
        assert!(
            err.to_string().contains("divisible by the patch size 4"),
            "{err}"
        );
    }
}
