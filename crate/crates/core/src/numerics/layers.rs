use crate::error::{Error, Result};
use crate::numerics::gemm::gemm;
use crate::numerics::{DenseTensor, Parameter, ParameterSet};
use rand::Rng;

/// Per-channel `x * scale + shift` on rank-4 tensors (no running statistics).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAffine {
    pub scale: Parameter,
    pub shift: Parameter,
}

impl ChannelAffine {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            scale: Parameter::new(format!("{name}.scale"), DenseTensor::full(&[channels], 1.0)),
            shift: Parameter::zeros(format!("{name}.shift"), &[channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    fn check(&self, x: &DenseTensor) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels() {
            return Err(Error::shape("affine channels (axis 1)", self.channels(), c));
        }
        Ok((n, c, h * w))
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let (_, c, plane) = self.check(x)?;
        let mut y = x.clone();
        for (i, p) in y.data_mut().chunks_mut(plane).enumerate() {
            let (s, b) = (
                self.scale.value.data()[i % c],
                self.shift.value.data()[i % c],
            );
            for v in p {
                *v = *v * s + b;
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &DenseTensor, dy: &DenseTensor) -> Result<DenseTensor> {
        let (_, c, plane) = self.check(x)?;
        x.check_same_shape(dy, "affine gradient")?;
        let mut dscale = vec![0.0; c];
        let mut dshift = vec![0.0; c];
        let mut dx = dy.clone();
        for (i, (xp, gp)) in x
            .data()
            .chunks(plane)
            .zip(dx.data_mut().chunks_mut(plane))
            .enumerate()
        {
            let ch = i % c;
            let s = self.scale.value.data()[ch];
            for (&xv, g) in xp.iter().zip(gp.iter_mut()) {
                dscale[ch] += xv * *g;
                dshift[ch] += *g;
                *g *= s;
            }
        }
        self.scale.accumulate(&dscale);
        self.shift.accumulate(&dshift);
        Ok(dx)
    }
}

impl ParameterSet for ChannelAffine {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.scale);
        f(&self.shift);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.scale);
        f(&mut self.shift);
    }
}

/// Dense layer on `[n, in]` rows: `y = x W^T + b`, `W` is `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Parameter::fan_in_uniform(
                format!("{name}.weight"),
                &[outputs, inputs],
                inputs,
                rng,
            ),
            bias: Parameter::zeros(format!("{name}.bias"), &[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn rows(&self, x: &DenseTensor) -> Result<usize> {
        if x.rank() != 2 {
            return Err(Error::shape("linear input rank", 2, x.rank()));
        }
        if x.shape()[1] != self.inputs() {
            return Err(Error::shape(
                "linear input features (axis 1)",
                self.inputs(),
                x.shape()[1],
            ));
        }
        Ok(x.shape()[0])
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let n = self.rows(x)?;
        let (i, o) = (self.inputs(), self.outputs());
        let mut y = DenseTensor::zeros(&[n, o]);
        for row in y.data_mut().chunks_mut(o) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(
            n,
            i,
            o,
            x.data(),
            false,
            self.weight.value.data(),
            true,
            1.0,
            y.data_mut(),
        );
        Ok(y)
    }

    pub fn backward(&mut self, x: &DenseTensor, dy: &DenseTensor) -> Result<DenseTensor> {
        let n = self.rows(x)?;
        let (i, o) = (self.inputs(), self.outputs());
        if dy.shape() != [n, o] {
            return Err(Error::shape(
                "linear gradient features",
                o,
                dy.len() / n.max(1),
            ));
        }
        let mut dw = vec![0.0; o * i];
        gemm(o, n, i, dy.data(), true, x.data(), false, 0.0, &mut dw);
        let mut db = vec![0.0; o];
        for row in dy.data().chunks(o) {
            for (b, g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        self.weight.accumulate(&dw);
        self.bias.accumulate(&db);
        let mut dx = DenseTensor::zeros(&[n, i]);
        gemm(
            n,
            o,
            i,
            dy.data(),
            false,
            self.weight.value.data(),
            false,
            0.0,
            dx.data_mut(),
        );
        Ok(dx)
    }
}

impl ParameterSet for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::new("l", 5, 3, &mut rng);
        lin.bias.value = DenseTensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let x = DenseTensor::from_fn(&[2, 5], |i| i as f64 * 0.25 - 1.0);
        let y = lin.forward(&x).unwrap();
        for n in 0..2 {
            for o in 0..3 {
                let mut acc = lin.bias.value.data()[o];
                for i in 0..5 {
                    acc += lin.weight.value.data()[o * 5 + i] * x.data()[n * 5 + i];
                }
                assert!((y.data()[n * 3 + o] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn affine_identity_at_init() {
        let a = ChannelAffine::new("a", 3);
        let x = DenseTensor::from_fn(&[2, 3, 2, 2], |i| i as f64);
        assert_eq!(a.forward(&x).unwrap(), x);
    }
}
