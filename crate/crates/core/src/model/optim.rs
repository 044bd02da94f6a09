use crate::error::{Error, Result};
use crate::model::config::OptimizerKind;
use crate::numerics::{Parameter, ParameterSet};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First-order update rule applied to every parameter in visiting order.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Self {
            kind,
            learning_rate,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step<P: ParameterSet + ?Sized>(&mut self, params: &mut P) {
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => params.visit_mut(&mut |p: &mut Parameter| {
                let g = p.gradient.data().to_vec();
                for (x, d) in p.value.data_mut().iter_mut().zip(g) {
                    *x -= lr * d;
                }
            }),
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let (ms, vs) = (&mut self.m, &mut self.v);
                let mut idx = 0;
                params.visit_mut(&mut |p: &mut Parameter| {
                    if ms.len() <= idx {
                        ms.push(vec![0.0; p.len()]);
                        vs.push(vec![0.0; p.len()]);
                    }
                    let (m, v) = (&mut ms[idx], &mut vs[idx]);
                    let Parameter {
                        value, gradient, ..
                    } = p;
                    for (((x, &g), m), v) in value
                        .data_mut()
                        .iter_mut()
                        .zip(gradient.data())
                        .zip(m)
                        .zip(v)
                    {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *x -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                    idx += 1;
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseTensor;

    #[test]
    fn sgd_step_is_exact() {
        let mut p = Parameter::new("w", DenseTensor::new(&[2], vec![1.0, -1.0]).unwrap());
        p.accumulate(&[0.5, 2.0]);
        Optimizer::sgd(0.1).unwrap().step(&mut p);
        assert_eq!(p.value.data(), &[1.0 - 0.05, -1.0 - 0.2]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Parameter::new("w", DenseTensor::new(&[2], vec![0.0, 0.0]).unwrap());
        p.accumulate(&[3.0, -0.01]);
        Optimizer::adam(1e-3).unwrap().step(&mut p);
        assert!((p.value.data()[0] + 1e-3).abs() < 1e-9);
        assert!((p.value.data()[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_positive_rate() {
        assert!(Optimizer::sgd(0.0).is_err());
        assert!(Optimizer::adam(f64::NAN).is_err());
    }
}
