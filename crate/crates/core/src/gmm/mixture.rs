use crate::error::{Error, Result};
use crate::gmm::linalg::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Mixture of `K` full-covariance Gaussians over joint space.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmParams {
    pub priors: Vec<f64>,
    pub means: Vec<Vec6>,
    pub covariances: Vec<Mat6>,
}

/// Per-component factorisation, reused across queries.
#[derive(Clone, Debug)]
pub struct Factorized {
    pub log_priors: Vec<f64>,
    pub chol: Vec<Mat6>,
    pub log_norm: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    /// Mean of the component with the smallest Mahalanobis distance.
    #[default]
    Nearest,
    /// Consistency-weighted average of all component means.
    Aggregate,
}

impl std::str::FromStr for RefineMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(RefineMode::Nearest),
            "aggregate" => Ok(RefineMode::Aggregate),
            _ => Err(Error::invalid(format!("unknown refine mode {s:?}"))),
        }
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmParams {
    pub fn k(&self) -> usize {
        self.priors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return Err(Error::invalid("mixture has no components"));
        }
        if self.means.len() != k || self.covariances.len() != k {
            return Err(Error::invalid(format!(
                "mixture has {k} priors, {} means and {} covariances",
                self.means.len(),
                self.covariances.len()
            )));
        }
        if self.priors.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::invalid("mixture priors must be positive"));
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture priors sum to {total}, not 1"
            )));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        for (i, c) in self.covariances.iter().enumerate() {
            if !is_symmetric(c, 1e-12) {
                return Err(Error::invalid(format!("covariance {i} is not symmetric")));
            }
            cholesky(c).map_err(|e| Error::invalid(format!("covariance {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn factorize(&self) -> Result<Factorized> {
        self.validate()?;
        let mut chol = Vec::with_capacity(self.k());
        let mut log_norm = Vec::with_capacity(self.k());
        for c in &self.covariances {
            let l = cholesky(c)?;
            log_norm.push(-0.5 * (DIM as f64 * (2.0 * PI).ln() + log_det_from_cholesky(&l)));
            chol.push(l);
        }
        Ok(Factorized {
            log_priors: self.priors.iter().map(|a| a.ln()).collect(),
            chol,
            log_norm,
        })
    }
}

impl Factorized {
    pub fn mahalanobis(&self, x: &Vec6, mean: &Vec6, k: usize) -> f64 {
        norm(&solve_lower(&self.chol[k], &sub(x, mean)))
    }

    /// `log(alpha_k) + log N(x | mu_k, Sigma_k)` for every component.
    pub fn joint_log_densities(&self, x: &Vec6, means: &[Vec6]) -> Vec<f64> {
        (0..self.chol.len())
            .map(|k| {
                let d = self.mahalanobis(x, &means[k], k);
                self.log_priors[k] + self.log_norm[k] - 0.5 * d * d
            })
            .collect()
    }
}

pub fn gmm_log_density(x: &Vec6, theta: &GmmParams) -> Result<f64> {
    let f = theta.factorize()?;
    Ok(log_sum_exp(&f.joint_log_densities(x, &theta.means)))
}

/// `sum_k alpha_k N(x | mu_k, Sigma_k)`.
pub fn gmm_density(x: &Vec6, theta: &GmmParams) -> Result<f64> {
    gmm_log_density(x, theta).map(f64::exp)
}

pub fn mahalanobis_distance(a: &Vec6, theta: &GmmParams, k: usize) -> Result<f64> {
    if k >= theta.k() {
        return Err(Error::invalid(format!(
            "component {k} out of range for K = {}",
            theta.k()
        )));
    }
    let f = theta.factorize()?;
    Ok(f.mahalanobis(a, &theta.means[k], k))
}

/// Distances to every component.
pub fn mahalanobis_all(a: &Vec6, theta: &GmmParams) -> Result<Vec<f64>> {
    let f = theta.factorize()?;
    Ok((0..theta.k())
        .map(|k| f.mahalanobis(a, &theta.means[k], k))
        .collect())
}

/// Index of the smallest distance; ties go to the lowest index.
pub fn nearest_component(a: &Vec6, theta: &GmmParams) -> Result<usize> {
    let d = mahalanobis_all(a, theta)?;
    let mut best = 0;
    for (k, &v) in d.iter().enumerate() {
        if v < d[best] {
            best = k;
        }
    }
    Ok(best)
}

pub fn select_nearest(a: &Vec6, theta: &GmmParams) -> Result<Vec6> {
    Ok(theta.means[nearest_component(a, theta)?])
}

/// Normalised weights `alpha_k exp(-l_k)`, computed in the log domain.
pub fn consistency_weights(a: &Vec6, theta: &GmmParams) -> Result<Vec<f64>> {
    let d = mahalanobis_all(a, theta)?;
    let logits: Vec<f64> = theta
        .priors
        .iter()
        .zip(&d)
        .map(|(p, l)| p.ln() - l)
        .collect();
    let z = log_sum_exp(&logits);
    Ok(logits.iter().map(|v| (v - z).exp()).collect())
}

/// Aggregated mean `sum w_k mu_k` and covariance `sum w_k^2 Sigma_k`.
pub fn conditional_aggregate(a: &Vec6, theta: &GmmParams) -> Result<(Vec6, Mat6)> {
    let w = consistency_weights(a, theta)?;
    let mut mean = ZERO6;
    let mut cov = ZERO66;
    for (k, &wk) in w.iter().enumerate() {
        for i in 0..DIM {
            mean[i] += wk * theta.means[k][i];
            for j in 0..DIM {
                cov[i][j] += wk * wk * theta.covariances[k][i][j];
            }
        }
    }
    Ok((mean, cov))
}

pub fn refine(a: &Vec6, theta: &GmmParams, mode: RefineMode) -> Result<Vec6> {
    match mode {
        RefineMode::Nearest => select_nearest(a, theta),
        RefineMode::Aggregate => conditional_aggregate(a, theta).map(|(m, _)| m),
    }
}
