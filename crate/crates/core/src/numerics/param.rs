use crate::error::{Error, Result};
use crate::numerics::DenseTensor;
use rand::Rng;

/// A learnable tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: DenseTensor,
    pub gradient: DenseTensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: DenseTensor) -> Self {
        let gradient = DenseTensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            gradient,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, DenseTensor::zeros(shape))
    }

    /// Uniform on `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
    pub fn fan_in_uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let value = DenseTensor::from_fn(shape, |_| rng.random_range(-bound..=bound));
        Self::new(name, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.gradient.data_mut().fill(0.0);
    }

    pub fn accumulate(&mut self, grad: &[f64]) {
        assert_eq!(
            grad.len(),
            self.gradient.len(),
            "gradient length for {}",
            self.name
        );
        for (g, &d) in self.gradient.data_mut().iter_mut().zip(grad) {
            *g += d;
        }
    }

    /// Replaces the value, keeping the shape.
    pub fn set_value(&mut self, value: DenseTensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::invalid(format!(
                "parameter {}: shape {:?} does not match {:?}",
                self.name,
                value.shape(),
                self.value.shape()
            )));
        }
        self.value = value;
        Ok(())
    }
}

/// Anything that owns a fixed, ordered list of parameters.
///
/// Visiting order is part of the contract: optimizers and checkpoints rely on it.
pub trait ParameterSet {
    fn visit(&self, f: &mut dyn FnMut(&Parameter));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |p| names.push(p.name.clone()));
        names
    }
}

impl ParameterSet for Parameter {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(self)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(self)
    }
}

impl<T: ParameterSet> ParameterSet for [T] {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for item in self {
            item.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for item in self {
            item.visit_mut(f);
        }
    }
}

impl<T: ParameterSet> ParameterSet for Vec<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.as_slice().visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.as_mut_slice().visit_mut(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_zeroes_gradient_exactly() {
        let mut p = Parameter::new("w", DenseTensor::full(&[2, 2], 1.0));
        p.accumulate(&[1.0, -2.0, 3.5, 1e-300]);
        p.zero_grad();
        assert!(p.gradient.data().iter().all(|&g| g == 0.0));
        assert_eq!(p.gradient.shape(), p.value.shape());
    }

    #[test]
    fn set_value_rejects_new_shape() {
        let mut p = Parameter::zeros("w", &[3]);
        assert!(p.set_value(DenseTensor::zeros(&[4])).is_err());
    }
}
