use crate::error::Result;
use crate::numerics::DenseTensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `max(0, v)^2`
    Srelu,
    Sigmoid,
}

#[inline]
pub fn srelu(v: f64) -> f64 {
    let r = v.max(0.0);
    r * r
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &DenseTensor, kind: Activation) -> DenseTensor {
    match kind {
        Activation::Srelu => x.map(srelu),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Input gradient given the forward input `x`, its output `y`, and `dy`.
pub fn activation_backward(
    x: &DenseTensor,
    y: &DenseTensor,
    dy: &DenseTensor,
    kind: Activation,
) -> Result<DenseTensor> {
    match kind {
        Activation::Srelu => x.zip_map(dy, |v, g| 2.0 * v.max(0.0) * g),
        Activation::Sigmoid => y.zip_map(dy, |s, g| s * (1.0 - s) * g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_examples() {
        assert_eq!(srelu(-3.0), 0.0);
        assert_eq!(srelu(2.0), 4.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(-2.0) + sigmoid(2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn srelu_monotone_and_zero_on_nonpositive() {
        let mut prev = srelu(-10.0);
        for i in -1000..=1000 {
            let v = i as f64 / 100.0;
            let s = srelu(v);
            assert!(s >= prev);
            if v <= 0.0 {
                assert_eq!(s, 0.0);
            }
            prev = s;
        }
    }
}
