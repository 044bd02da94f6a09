use crate::error::{Error, Result};
use crate::numerics::{Parameter, ParameterSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// A deterministic scalar function of a set of parameters with a
/// hand-written reverse pass.
pub trait Differentiable: ParameterSet {
    fn loss(&self) -> Result<f64>;

    /// Resets every gradient, then accumulates d(loss)/d(parameter).
    fn loss_and_gradients(&mut self) -> Result<f64>;

    /// The loss plus a fingerprint of which side of every kink (ReLU-style
    /// threshold, max-pool winner, clamp) the evaluation landed on. Finite
    /// differences are skipped where a perturbation changes the fingerprint.
    fn loss_with_pattern(&self) -> Result<(f64, Option<u64>)> {
        Ok((self.loss()?, None))
    }
}

pub const MIN_ENTRIES_PER_PARAMETER: usize = 32;

#[derive(Clone, Debug, Serialize)]
pub struct ParameterCheck {
    pub name: String,
    pub entries_checked: usize,
    /// Entries whose perturbation crossed a kink and were replaced.
    pub kinks_skipped: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub parameters: Vec<ParameterCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.parameters
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&ParameterCheck> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Feeds the side of `threshold` each value falls on into a fingerprint.
pub fn hash_threshold<H: std::hash::Hasher>(h: &mut H, values: &[f64], threshold: f64) {
    let mut word = 0u64;
    for (i, &v) in values.iter().enumerate() {
        word = (word << 1) | u64::from(v > threshold);
        if i % 64 == 63 {
            h.write_u64(word);
            word = 0;
        }
    }
    h.write_u64(word);
    h.write_usize(values.len());
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central-difference check on a random subsample of at least
/// [`MIN_ENTRIES_PER_PARAMETER`] entries per parameter (all entries when
/// the parameter is smaller). Entries whose perturbation crosses a kink are
/// replaced by further random entries.
pub fn grad_check<F: Differentiable + ?Sized>(
    f: &mut F,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    grad_check_sampled(f, eps, MIN_ENTRIES_PER_PARAMETER, seed)
}

pub fn grad_check_sampled<F: Differentiable + ?Sized>(
    f: &mut F,
    eps: f64,
    entries_per_parameter: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!(
            "eps must lie in [1e-6, 1e-3], got {eps}"
        )));
    }
    let entries_per_parameter = entries_per_parameter.max(MIN_ENTRIES_PER_PARAMETER);
    let base = f.loss_and_gradients()?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss is {base} at the unperturbed point"
        )));
    }
    let (_, base_pattern) = f.loss_with_pattern()?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    f.visit(&mut |p: &Parameter| analytic.push((p.name.clone(), p.gradient.data().to_vec())));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parameters = Vec::with_capacity(analytic.len());
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        let len = grad.len();
        // Random order over all entries; kink-crossing entries are replaced
        // by the next ones in this order.
        let order = rand::seq::index::sample(&mut rng, len, len).into_vec();
        let mut check = ParameterCheck {
            name: name.clone(),
            entries_checked: 0,
            kinks_skipped: 0,
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for idx in order {
            if check.entries_checked == entries_per_parameter {
                break;
            }
            let (plus, p_plus) = perturbed_loss(f, pi, idx, eps, name, "+")?;
            let (minus, p_minus) = perturbed_loss(f, pi, idx, -eps, name, "-")?;
            if p_plus != base_pattern || p_minus != base_pattern {
                check.kinks_skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grad[idx], numeric);
            if err > check.max_relative_error || check.entries_checked == 0 {
                check.max_relative_error = err;
                check.worst_index = idx;
                check.analytic = grad[idx];
                check.numeric = numeric;
            }
            check.entries_checked += 1;
        }
        parameters.push(check);
    }
    Ok(GradCheckReport { eps, parameters })
}

fn perturbed_loss<F: Differentiable + ?Sized>(
    f: &mut F,
    param: usize,
    index: usize,
    delta: f64,
    name: &str,
    sign: &str,
) -> Result<(f64, Option<u64>)> {
    let original = nudge(f, param, index, |v| v + delta);
    let out = f.loss_with_pattern();
    nudge(f, param, index, |_| original);
    let (loss, pattern) = out?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss is {loss} after perturbing {name}[{index}] by {sign}eps"
        )));
    }
    Ok((loss, pattern))
}

/// Replaces one entry through `set` and returns its previous value.
fn nudge<F: Differentiable + ?Sized>(
    f: &mut F,
    param: usize,
    index: usize,
    set: impl Fn(f64) -> f64,
) -> f64 {
    let mut seen = 0;
    let mut old = 0.0;
    f.visit_mut(&mut |p: &mut Parameter| {
        if seen == param {
            let v = &mut p.value.data_mut()[index];
            old = *v;
            *v = set(old);
        }
        seen += 1;
    });
    old
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::conv::{conv2d, conv2d_backward};
    use crate::numerics::{ConvSpec, DenseTensor};

    struct Square(Parameter);

    impl ParameterSet for Square {
        fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
            f(&mut self.0)
        }
    }

    impl Differentiable for Square {
        fn loss(&self) -> Result<f64> {
            Ok(self.0.value.data()[0].powi(2))
        }
        fn loss_and_gradients(&mut self) -> Result<f64> {
            self.zero_grad();
            let t = self.0.value.data()[0];
            self.0.accumulate(&[2.0 * t]);
            Ok(t * t)
        }
    }

    #[test]
    fn quadratic_exact() {
        let mut f = Square(Parameter::new("theta", DenseTensor::scalar(3.0)));
        let r = grad_check(&mut f, 1e-4, 0).unwrap();
        let c = &r.parameters[0];
        assert!((c.analytic - 6.0).abs() < 1e-7 && (c.numeric - 6.0).abs() < 1e-7);
        // parameter left unchanged
        assert_eq!(f.0.value.data()[0], 3.0);
    }

    #[test]
    fn eps_range_enforced() {
        let mut f = Square(Parameter::new("theta", DenseTensor::scalar(3.0)));
        assert!(grad_check(&mut f, 1e-2, 0).is_err());
        assert!(grad_check(&mut f, 1e-7, 0).is_err());
    }

    struct Blowup(Parameter);

    impl ParameterSet for Blowup {
        fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
            f(&mut self.0)
        }
    }

    impl Differentiable for Blowup {
        fn loss(&self) -> Result<f64> {
            let t = self.0.value.data()[0];
            Ok(if t > 0.0 { f64::INFINITY } else { t })
        }
        fn loss_and_gradients(&mut self) -> Result<f64> {
            self.zero_grad();
            self.0.accumulate(&[1.0]);
            self.loss()
        }
    }

    #[test]
    fn non_finite_loss_names_perturbation() {
        let mut f = Blowup(Parameter::new("edge", DenseTensor::scalar(0.0)));
        let err = grad_check(&mut f, 1e-4, 0).unwrap_err();
        assert!(err.to_string().contains("edge[0]"), "{err}");
        assert!(err.to_string().contains("+eps"), "{err}");
    }

    struct ConvMse {
        w: Parameter,
        b: Parameter,
        x: DenseTensor,
        target: DenseTensor,
        spec: ConvSpec,
    }

    impl ParameterSet for ConvMse {
        fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
            f(&self.w);
            f(&self.b);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
            f(&mut self.w);
            f(&mut self.b);
        }
    }

    impl Differentiable for ConvMse {
        fn loss(&self) -> Result<f64> {
            let y = conv2d(&self.x, &self.w, &self.b, &self.spec)?;
            let d = y.zip_map(&self.target, |a, b| a - b)?;
            Ok(d.dot(&d)? / d.len() as f64)
        }
        fn loss_and_gradients(&mut self) -> Result<f64> {
            self.zero_grad();
            let y = conv2d(&self.x, &self.w, &self.b, &self.spec)?;
            let d = y.zip_map(&self.target, |a, b| a - b)?;
            let n = d.len() as f64;
            let g = conv2d_backward(&self.x, &self.w.value, &self.spec, &d.scale(2.0 / n))?;
            self.w.accumulate(g.dw.data());
            self.b.accumulate(g.db.data());
            Ok(d.dot(&d)? / n)
        }
    }

    #[test]
    fn pointwise_conv_mse() {
        let spec = ConvSpec::new(3, 2, 1, 1);
        let mut f = ConvMse {
            w: Parameter::new(
                "w",
                DenseTensor::from_fn(&spec.weight_shape(), |i| (i as f64 * 0.7).sin()),
            ),
            b: Parameter::new("b", DenseTensor::new(&[2], vec![0.3, -0.1]).unwrap()),
            x: DenseTensor::from_fn(&[2, 3, 4, 4], |i| (i as f64 * 0.31).cos()),
            target: DenseTensor::from_fn(&[2, 2, 4, 4], |i| (i as f64 * 0.17).sin()),
            spec,
        };
        let r = grad_check(&mut f, 1e-4, 7).unwrap();
        assert!(r.max_relative_error() < 1e-6, "{r:?}");
        assert_eq!(r.parameters.len(), 2);
        assert_eq!(r.parameters[0].entries_checked, 6);
    }
}
