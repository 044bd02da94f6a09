use crate::error::{Error, Result};
use crate::gmm::linalg::*;
use crate::gmm::mixture::{log_sum_exp, GmmParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Total responsibility below which a component counts as collapsed.
pub const COLLAPSE_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmOptions {
    pub seed: u64,
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            seed: 0,
            ridge: 1e-6,
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub params: GmmParams,
    /// Mean per-sample log-likelihood; entry 0 is the initialisation.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Components re-seeded after collapsing, as (iteration, component).
    pub reseeds: Vec<(usize, usize)>,
}

/// Posterior component probabilities, one row per sample, with the mean log-likelihood.
pub fn responsibilities(x: &[Vec6], theta: &GmmParams) -> Result<(Vec<Vec<f64>>, f64)> {
    let f = theta.factorize()?;
    let mut total = 0.0;
    let mut gamma = Vec::with_capacity(x.len());
    for xi in x {
        let mut row = f.joint_log_densities(xi, &theta.means);
        let z = log_sum_exp(&row);
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("sample log-likelihood is {z}")));
        }
        total += z;
        for v in row.iter_mut() {
            *v = (*v - z).exp();
        }
        gamma.push(row);
    }
    Ok((gamma, total / x.len().max(1) as f64))
}

fn sample_covariance(x: &[Vec6], weights: Option<&[f64]>, mean: &Vec6) -> Mat6 {
    let mut c = ZERO66;
    let mut total = 0.0;
    for (n, xi) in x.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[n]);
        total += w;
        let d = sub(xi, mean);
        for i in 0..DIM {
            for j in 0..=i {
                c[i][j] += w * d[i] * d[j];
            }
        }
    }
    for i in 0..DIM {
        for j in 0..=i {
            c[i][j] /= total;
            c[j][i] = c[i][j];
        }
    }
    c
}

fn sample_mean(x: &[Vec6]) -> Vec6 {
    let mut m = ZERO6;
    for xi in x {
        for i in 0..DIM {
            m[i] += xi[i];
        }
    }
    m.map(|v| v / x.len() as f64)
}

fn sq_dist(a: &Vec6, b: &Vec6) -> f64 {
    let d = norm(&sub(a, b));
    d * d
}

/// k-means++ seeding of the means.
fn seed_means(x: &[Vec6], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec6> {
    let mut means = vec![x[rng.random_range(0..x.len())]];
    let mut d2: Vec<f64> = x.iter().map(|xi| sq_dist(xi, &means[0])).collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = x.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..x.len())
        };
        means.push(x[pick]);
        for (i, xi) in x.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(xi, &x[pick]));
        }
    }
    means
}

fn check_options(x: &[Vec6], k: usize, opts: &EmOptions) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("component count must be at least 1"));
    }
    if x.len() < k {
        return Err(Error::invalid(format!(
            "need at least K = {k} samples, got N = {}",
            x.len()
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid(format!(
            "tol must be positive, got {}",
            opts.tol
        )));
    }
    if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
        return Err(Error::invalid(format!(
            "ridge must be finite and >= 0, got {}",
            opts.ridge
        )));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    Ok(())
}

/// Fits a `k`-component mixture by expectation maximisation.
pub fn em_fit(x: &[Vec6], k: usize, opts: &EmOptions) -> Result<EmFit> {
    check_options(x, k, opts)?;
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let global_mean = sample_mean(x);
    let mut global_cov = sample_covariance(x, None, &global_mean);
    add_ridge(&mut global_cov, opts.ridge.max(1e-12));

    let mut theta = GmmParams {
        priors: vec![1.0 / k as f64; k],
        means: seed_means(x, k, &mut rng),
        covariances: vec![global_cov; k],
    };
    let (mut gamma, mut ll) = responsibilities(x, &theta)?;
    let mut trace = vec![ll];
    let mut reseeds = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let mut priors = vec![0.0; k];
        let mut means = vec![ZERO6; k];
        let mut covariances = vec![ZERO66; k];
        for c in 0..k {
            let w: Vec<f64> = gamma.iter().map(|row| row[c]).collect();
            let nk: f64 = w.iter().sum();
            if nk < COLLAPSE_THRESHOLD {
                let worst = worst_fit_sample(x, &theta)?;
                log::warn!(
                    "EM iteration {iterations}: component {c} collapsed (total responsibility {nk:e}), re-seeded from sample {worst}"
                );
                reseeds.push((iterations, c));
                priors[c] = 1.0 / n as f64;
                means[c] = x[worst];
                covariances[c] = global_cov;
                continue;
            }
            let mut m = ZERO6;
            for (xi, wi) in x.iter().zip(&w) {
                for i in 0..DIM {
                    m[i] += wi * xi[i];
                }
            }
            m = m.map(|v| v / nk);
            let mut cov = sample_covariance(x, Some(&w), &m);
            add_ridge(&mut cov, opts.ridge);
            priors[c] = nk / n as f64;
            means[c] = m;
            covariances[c] = cov;
        }
        let total: f64 = priors.iter().sum();
        priors.iter_mut().for_each(|p| *p /= total);
        theta = GmmParams {
            priors,
            means,
            covariances,
        };

        let (g, ll_new) = responsibilities(x, &theta)?;
        gamma = g;
        trace.push(ll_new);
        let delta = (ll_new - ll).abs();
        ll = ll_new;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    log::debug!("EM finished after {iterations} iterations, mean log-likelihood {ll}");
    Ok(EmFit {
        params: theta,
        trace,
        iterations,
        converged,
        reseeds,
    })
}

fn worst_fit_sample(x: &[Vec6], theta: &GmmParams) -> Result<usize> {
    let f = theta.factorize()?;
    let mut worst = 0;
    let mut worst_ll = f64::INFINITY;
    for (i, xi) in x.iter().enumerate() {
        let ll = log_sum_exp(&f.joint_log_densities(xi, &theta.means));
        if ll < worst_ll {
            worst_ll = ll;
            worst = i;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_fewer_samples_than_components() {
        let x = vec![[0.0; 6]; 3];
        let err = em_fit(&x, 4, &EmOptions::default()).unwrap_err();
        assert!(err.to_string().contains("N = 3"));
    }

    #[test]
    fn responsibilities_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec6> = (0..200)
            .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
            .collect();
        let fit = em_fit(&x, 3, &EmOptions::default()).unwrap();
        let (g, _) = responsibilities(&x, &fit.params).unwrap();
        for row in g {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn degenerate_data_stays_valid() {
        // Four identical points and one outlier.
        let mut x = vec![[0.0; 6]; 4];
        x.push([10.0; 6]);
        let fit = em_fit(
            &x,
            3,
            &EmOptions {
                max_iter: 5,
                ..EmOptions::default()
            },
        )
        .unwrap();
        fit.params.validate().unwrap();
        assert!(fit.trace.iter().all(|v| v.is_finite()));
    }
}
