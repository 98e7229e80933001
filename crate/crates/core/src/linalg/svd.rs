//! One-sided Jacobi SVD with a deterministic sign convention.
//!
//! Sign convention: in every left singular vector `u_k` the entry of largest
//! magnitude is made nonnegative (ties go to the lowest row index) and `v_k`
//! is flipped jointly. With a simple spectrum this makes the factorization a
//! well-defined function of the input.

use super::matrix::{dot, norm, Matrix};
use crate::error::{Error, Result};

/// Sweep cap of the Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;

/// Relative gap below which two singular values count as equal.
pub const SIMPLE_SPECTRUM_GAP: f64 = 1e-6;

/// Thin SVD `m = u * diag(sigma) * v^T` with `r = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows x r`, orthonormal columns.
    pub u: Matrix,
    /// Nonincreasing, nonnegative.
    pub sigma: Vec<f64>,
    /// `cols x r`, orthonormal columns.
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.sigma.len(), |i, k| {
            self.u[(i, k)] * self.sigma[k]
        });
        us.matmul_t(&self.v)
    }

    /// Rank-`k` truncation `U_k Σ_k V_k^T`.
    pub fn truncated(&self, k: usize) -> Matrix {
        let k = k.min(self.sigma.len());
        let us = Matrix::from_fn(self.u.rows(), k, |i, c| self.u[(i, c)] * self.sigma[c]);
        us.matmul_t(&self.v.columns(0, k))
    }

    pub fn is_simple(&self) -> bool {
        is_simple_spectrum(&self.sigma)
    }

    /// Number of singular values above `max(rows, cols) * eps * sigma_1`.
    pub fn numerical_rank(&self) -> usize {
        let dim = self.u.rows().max(self.v.rows()) as f64;
        let Some(&top) = self.sigma.first() else {
            return 0;
        };
        let tol = dim * f64::EPSILON * top;
        self.sigma.iter().filter(|&&s| s > tol && s > 0.0).count()
    }

    /// Ratio `sigma_max / sigma_min`, infinite when the smallest is zero.
    pub fn condition_number(&self) -> f64 {
        match (self.sigma.first(), self.sigma.last()) {
            (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
            _ => f64::INFINITY,
        }
    }
}

/// True when every consecutive gap exceeds `SIMPLE_SPECTRUM_GAP * sigma_1`.
pub fn is_simple_spectrum(sigma: &[f64]) -> bool {
    let Some(&top) = sigma.first() else {
        return true;
    };
    if top == 0.0 {
        return sigma.len() <= 1;
    }
    sigma.windows(2).all(|w| w[0] - w[1] > SIMPLE_SPECTRUM_GAP * top)
}

/// Deterministic thin SVD.
pub fn svd_deterministic(m: &Matrix) -> Result<Svd> {
    if !m.is_finite() {
        return Err(Error::NonFinite { context: "svd_deterministic" });
    }
    let (mut u, sigma, mut v) = if m.rows() >= m.cols() {
        jacobi_tall(m)?
    } else {
        let (u_t, s, v_t) = jacobi_tall(&m.t())?;
        (v_t, s, u_t)
    };
    for k in 0..sigma.len() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..u.rows() {
            let a = u[(i, k)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if u[(best, k)] < 0.0 {
            for i in 0..u.rows() {
                u[(i, k)] = -u[(i, k)];
            }
            for i in 0..v.rows() {
                v[(i, k)] = -v[(i, k)];
            }
        }
    }
    Ok(Svd { u, sigma, v })
}

/// Jacobi on the columns of a tall (`rows >= cols`) matrix.
fn jacobi_tall(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let tol = (m.max(1) as f64) * f64::EPSILON;

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                let gamma = dot(&cols[i], &cols[j]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, i, j, c, s);
                rotate(&mut vcols, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let sigma: Vec<f64> = order.iter().map(|&k| norms[k]).collect();
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &k in &order {
        let s = norms[k];
        let mut u: Vec<f64> = if s > 0.0 {
            cols[k].iter().map(|x| x / s).collect()
        } else {
            vec![0.0; m]
        };
        // Re-orthogonalize against earlier columns; replace numerically
        // dependent directions (zero or negligible sigma) by a completion.
        let len = orthogonalize_against(&mut u, &ucols);
        if len < 0.5 {
            u = completion_vector(m, &ucols);
        } else {
            u.iter_mut().for_each(|x| *x /= len);
        }
        ucols.push(u);
    }
    let vsorted: Vec<Vec<f64>> = order.iter().map(|&k| vcols[k].clone()).collect();
    Ok((
        Matrix::from_columns(m, &ucols),
        sigma,
        Matrix::from_columns(n, &vsorted),
    ))
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    for (x, y) in lo[i].iter_mut().zip(hi[0].iter_mut()) {
        let xi = *x;
        let yj = *y;
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Two passes of Gram-Schmidt; returns the residual norm.
pub(crate) fn orthogonalize_against(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
    }
    norm(v)
}

/// Unit vector orthogonal to `basis`, taken from the coordinate axis with the
/// largest residual.
pub(crate) fn completion_vector(m: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for axis in 0..m {
        let mut e = vec![0.0; m];
        e[axis] = 1.0;
        let len = orthogonalize_against(&mut e, basis);
        if best.as_ref().is_none_or(|(l, _)| len > *l + 1e-12) {
            best = Some((len, e));
        }
    }
    let (len, mut e) = best.expect("completion requested in a zero-dimensional space");
    e.iter_mut().for_each(|x| *x /= len);
    e
}

/// Best rank-`k` approximation in Frobenius norm.
#[derive(Debug, Clone)]
pub struct RankProjection {
    pub matrix: Matrix,
    /// `sigma_k` and `sigma_{k+1}` coincide, so the projection is not unique.
    pub tie: bool,
}

pub fn project_rank(m: &Matrix, k: usize) -> Result<RankProjection> {
    let svd = svd_deterministic(m)?;
    let tie = k > 0
        && k < svd.sigma.len()
        && svd.sigma[k - 1] - svd.sigma[k] <= SIMPLE_SPECTRUM_GAP * svd.sigma[0]
        && svd.sigma[k - 1] > 0.0;
    Ok(RankProjection { matrix: svd.truncated(k), tie })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::{gaussian_matrix, rng};

    fn check_contract(m: &Matrix) -> Svd {
        let s = svd_deterministic(m).unwrap();
        let scale = m.frobenius_norm().max(1.0);
        assert!(s.reconstruct().distance(m) <= 1e-9 * scale);
        assert!(s.u.orthonormality_defect() <= 1e-10);
        assert!(s.v.orthonormality_defect() <= 1e-10);
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.sigma.iter().all(|&x| x >= 0.0));
        s
    }

    #[test]
    fn identity_case() {
        let s = check_contract(&Matrix::identity(3));
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);
        assert_eq!(s.u, Matrix::identity(3));
        assert_eq!(s.v, Matrix::identity(3));
    }

    #[test]
    fn positive_diagonal_case() {
        let s = check_contract(&Matrix::diag(&[2.0, 1.0]));
        assert_eq!(s.sigma, vec![2.0, 1.0]);
        assert_eq!(s.u, Matrix::identity(2));
        assert_eq!(s.v, Matrix::identity(2));
    }

    #[test]
    fn diagonal_is_sorted_and_sign_fixed() {
        let s = check_contract(&Matrix::diag(&[1.0, -3.0, 2.0]));
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
        for k in 0..3 {
            let col = s.u.col(k);
            let big = col.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn random_tall_wide_and_rank_deficient() {
        let mut r = rng(11);
        check_contract(&gaussian_matrix(5, 3, 1.0, &mut r));
        check_contract(&gaussian_matrix(3, 7, 1.0, &mut r));
        let low = gaussian_matrix(6, 2, 1.0, &mut r).matmul(&gaussian_matrix(2, 5, 1.0, &mut r));
        let s = check_contract(&low);
        assert_eq!(s.numerical_rank(), 2);
        check_contract(&Matrix::zeros(3, 2));
    }

    #[test]
    fn repeated_rows() {
        let x = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]).unwrap();
        let s = check_contract(&x);
        assert_eq!(s.numerical_rank(), 1);
        assert!(!s.is_simple());
    }

    #[test]
    fn rank_projection_on_diagonal() {
        let p = project_rank(&Matrix::diag(&[3.0, 2.0, 1.0]), 2).unwrap();
        assert!(p.matrix.distance(&Matrix::diag(&[3.0, 2.0, 0.0])) < 1e-14);
        assert!(!p.tie);
        let tied = project_rank(&Matrix::diag(&[3.0, 1.0, 1.0]), 2).unwrap();
        assert!(tied.tie);
    }
}
