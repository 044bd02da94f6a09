//! Fixed-size 6x6 dense linear algebra.

use crate::error::{Error, Result};

pub const DIM: usize = 6;
pub type Vec6 = [f64; DIM];
pub type Mat6 = [[f64; DIM]; DIM];

pub const ZERO6: Vec6 = [0.0; DIM];
pub const ZERO66: Mat6 = [[0.0; DIM]; DIM];

pub fn identity() -> Mat6 {
    let mut m = ZERO66;
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn sub(a: &Vec6, b: &Vec6) -> Vec6 {
    std::array::from_fn(|i| a[i] - b[i])
}

pub fn norm(a: &Vec6) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn mat_vec(m: &Mat6, v: &Vec6) -> Vec6 {
    std::array::from_fn(|i| (0..DIM).map(|j| m[i][j] * v[j]).sum())
}

pub fn mat_mul(a: &Mat6, b: &Mat6) -> Mat6 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..DIM).map(|k| a[i][k] * b[k][j]).sum()))
}

pub fn transpose(a: &Mat6) -> Mat6 {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
}

pub fn scale(a: &Mat6, s: f64) -> Mat6 {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][j] * s))
}

pub fn add_ridge(a: &mut Mat6, ridge: f64) {
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += ridge;
    }
}

pub fn is_symmetric(a: &Mat6, tol: f64) -> bool {
    (0..DIM).all(|i| (0..i).all(|j| (a[i][j] - a[j][i]).abs() <= tol * (1.0 + a[i][j].abs())))
}

/// Lower-triangular `L` with `L L^T = a`; errors unless `a` is positive definite.
pub fn cholesky(a: &Mat6) -> Result<Mat6> {
    let mut l = ZERO66;
    for i in 0..DIM {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::invalid(format!(
                        "covariance is not positive definite (pivot {i} = {s})"
                    )));
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Solves `L z = b` for lower-triangular `L`.
pub fn solve_lower(l: &Mat6, b: &Vec6) -> Vec6 {
    let mut z = ZERO6;
    for i in 0..DIM {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * z[k];
        }
        z[i] = s / l[i][i];
    }
    z
}

/// `log det(L L^T)`.
pub fn log_det_from_cholesky(l: &Mat6) -> f64 {
    2.0 * (0..DIM).map(|i| l[i][i].ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let b: Mat6 =
            std::array::from_fn(|i| std::array::from_fn(|j| ((i * 7 + j * 3) % 5) as f64 - 2.0));
        let mut a = mat_mul(&b, &transpose(&b));
        add_ridge(&mut a, 0.5);
        let l = cholesky(&a).unwrap();
        let r = mat_mul(&l, &transpose(&l));
        for i in 0..DIM {
            for j in 0..DIM {
                assert!((r[i][j] - a[i][j]).abs() < 1e-12);
            }
        }
        let x = [1.0, -2.0, 0.5, 3.0, 0.0, -1.0];
        let z = solve_lower(&l, &mat_vec(&l, &x));
        assert!(norm(&sub(&z, &x)) < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = identity();
        a[3][3] = -1.0;
        assert!(cholesky(&a).is_err());
        assert!(cholesky(&ZERO66).is_err());
    }
}
