use crate::error::{Error, Result};
use crate::numerics::DenseTensor;

/// 2x2 max pooling with stride 2. Also returns, for each output, the flat
/// index of the winning input (first maximum in row-major window order).
pub fn max_pool2x2(x: &DenseTensor) -> Result<(DenseTensor, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "max pooling needs even extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = DenseTensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0; n * c * oh * ow];
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                y.data_mut()[o] = xd[best];
                argmax[o] = best;
            }
        }
    }
    Ok((y, argmax))
}

pub fn max_pool2x2_backward(
    dy: &DenseTensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<DenseTensor> {
    if dy.len() != argmax.len() {
        return Err(Error::shape("pool gradient length", argmax.len(), dy.len()));
    }
    let mut dx = DenseTensor::zeros(input_shape);
    for (&g, &i) in dy.data().iter().zip(argmax) {
        dx.data_mut()[i] += g;
    }
    Ok(dx)
}

/// Mean over the spatial axes: `[n, c, h, w] -> [n, c]`.
pub fn global_avg_pool(x: &DenseTensor) -> Result<DenseTensor> {
    let (n, c, h, w) = x.dims4()?;
    let inv = 1.0 / (h * w) as f64;
    let data = x
        .data()
        .chunks(h * w)
        .map(|p| p.iter().sum::<f64>() * inv)
        .collect();
    DenseTensor::new(&[n, c], data)
}

pub fn global_avg_pool_backward(dy: &DenseTensor, input_shape: &[usize]) -> Result<DenseTensor> {
    let mut dx = DenseTensor::zeros(input_shape);
    let (n, c, h, w) = dx.dims4()?;
    if dy.len() != n * c {
        return Err(Error::shape(
            "average pool gradient length",
            n * c,
            dy.len(),
        ));
    }
    let inv = 1.0 / (h * w) as f64;
    for (p, &g) in dx.data_mut().chunks_mut(h * w).zip(dy.data()) {
        p.fill(g * inv);
    }
    Ok(dx)
}
