use crate::error::{Error, Result};
use crate::numerics::DenseTensor;

/// Source taps `(i0, i1, frac)` along one axis, half-pixel centres.
fn taps(input: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..input * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling of a rank-4 tensor by an integer factor.
pub fn bilinear_upsample(x: &DenseTensor, factor: usize) -> Result<DenseTensor> {
    if factor == 0 {
        return Err(Error::invalid("upsample factor must be at least 1"));
    }
    let (n, c, h, w) = x.dims4()?;
    if factor == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (h * factor, w * factor);
    let ty = taps(h, factor);
    let tx = taps(w, factor);
    let mut y = DenseTensor::zeros(&[n, c, oh, ow]);
    for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(oh * ow)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = r0[x0] + fx * (r0[x1] - r0[x0]);
                let bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                dst[oy * ow + ox] = top + fy * (bot - top);
            }
        }
    }
    Ok(y)
}

/// Adjoint of [`bilinear_upsample`] for an input of shape `input_shape`.
pub fn bilinear_upsample_backward(
    dy: &DenseTensor,
    input_shape: &[usize],
    factor: usize,
) -> Result<DenseTensor> {
    if factor == 0 {
        return Err(Error::invalid("upsample factor must be at least 1"));
    }
    let probe = DenseTensor::zeros(input_shape);
    let (n, c, h, w) = probe.dims4()?;
    let expected = [n, c, h * factor, w * factor];
    if dy.shape() != expected {
        return Err(Error::invalid(format!(
            "upsample gradient shape {:?}, expected {:?}",
            dy.shape(),
            expected
        )));
    }
    if factor == 1 {
        return Ok(dy.clone());
    }
    let (oh, ow) = (h * factor, w * factor);
    let ty = taps(h, factor);
    let tx = taps(w, factor);
    let mut dx = probe;
    for (g, dst) in dy
        .data()
        .chunks(oh * ow)
        .zip(dx.data_mut().chunks_mut(h * w))
    {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let top = v * (1.0 - fy);
                let bot = v * fy;
                dst[y0 * w + x0] += top * (1.0 - fx);
                dst[y0 * w + x1] += top * fx;
                dst[y1 * w + x0] += bot * (1.0 - fx);
                dst[y1 * w + x1] += bot * fx;
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_preserved() {
        let x = DenseTensor::full(&[1, 2, 3, 5], 7.0);
        let y = bilinear_upsample(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 6, 10]);
        assert!(y.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn factor_one_is_bit_identical() {
        let x = DenseTensor::from_fn(&[1, 1, 2, 3], |i| -(i as f64) * 0.1 - 0.0);
        let y = bilinear_upsample(&x, 1).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_factor_rejected() {
        assert!(bilinear_upsample(&DenseTensor::zeros(&[1, 1, 1, 1]), 0).is_err());
    }

    #[test]
    fn ramp_columns_by_hand() {
        let x = DenseTensor::new(&[1, 1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = bilinear_upsample(&x, 2).unwrap();
        // Output column centres map to sources -0.25 (clamped to 0), 0.25, 0.75, 1.25.
        let expected = [0.0, 0.25, 0.75, 1.0];
        for row in y.data().chunks(4) {
            for (v, e) in row.iter().zip(expected) {
                assert!((v - e).abs() < 1e-15);
            }
            assert!(row.windows(2).all(|p| p[0] <= p[1]));
        }
    }

    #[test]
    fn backward_is_adjoint() {
        let x = DenseTensor::from_fn(&[2, 1, 3, 4], |i| ((i * 7) % 11) as f64 - 5.0);
        for f in [2, 4] {
            let y = bilinear_upsample(&x, f).unwrap();
            let dy = DenseTensor::from_fn(y.shape(), |i| ((i * 13) % 17) as f64 * 0.1);
            let dx = bilinear_upsample_backward(&dy, x.shape(), f).unwrap();
            let lhs = dy.dot(&y).unwrap();
            let rhs = dx.dot(&x).unwrap();
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }
}
