use super::matrix::{norm, Matrix};
use super::svd::{completion_vector, orthogonalize_against, svd_deterministic};
use crate::error::{Error, Result};

/// Solves `a x = b` by LU with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if !a.is_square() || b.rows() != n {
        return Err(crate::error::shape_err(
            "solve",
            format!("square system with {n} rows"),
            format!("{:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.max_abs();
    if scale == 0.0 {
        return Err(Error::Singular { condition: f64::INFINITY });
    }
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot <= 1e-14 * scale {
            return Err(Error::Singular { condition: f64::INFINITY });
        }
        if p != k {
            for j in 0..n {
                let t = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = t;
            }
            for j in 0..x.cols() {
                let t = x[(k, j)];
                x[(k, j)] = x[(p, j)];
                x[(p, j)] = t;
            }
        }
        for i in (k + 1)..n {
            let f = lu[(i, k)] / lu[(k, k)];
            lu[(i, k)] = f;
            for j in (k + 1)..n {
                lu[(i, j)] -= f * lu[(k, j)];
            }
            for j in 0..x.cols() {
                x[(i, j)] -= f * x[(k, j)];
            }
        }
    }
    for j in 0..x.cols() {
        for i in (0..n).rev() {
            let mut s = x[(i, j)];
            for k in (i + 1)..n {
                s -= lu[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = s / lu[(i, i)];
        }
    }
    Ok(x)
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    solve(a, &Matrix::identity(a.rows()))
}

/// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(crate::error::shape_err("symmetric_eigenvalues", "square", format!("{:?}", m.shape())));
    }
    let n = m.rows();
    let mut a = m.symmetrized();
    let total = a.frobenius_norm();
    const SWEEPS: usize = 100;
    let mut converged = false;
    for _ in 0..SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    if !converged {
        return Err(Error::EigenNoConvergence { sweeps: SWEEPS });
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Matrix exponential of an antisymmetric matrix, an element of `SO(n)`.
///
/// Scaling and squaring of the truncated Taylor series.
pub fn exp_antisymmetric(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(crate::error::shape_err("exp_antisymmetric", "square", format!("{:?}", a.shape())));
    }
    let residual = (a + &a.t()).frobenius_norm();
    if residual > 1e-12 {
        return Err(Error::NotAntisymmetric { residual });
    }
    let n = a.rows();
    let norm_a = a.frobenius_norm();
    let squarings = if norm_a > 0.5 { (norm_a / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a.scale(0.5f64.powi(squarings));

    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=30 {
        term = term.matmul(&b).scale(1.0 / k as f64);
        result = &result + &term;
        if term.frobenius_norm() <= f64::EPSILON * 1e-2 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    Ok(result)
}

/// Orthonormal basis (as columns) of the column space of `columns`.
///
/// Columns are processed left to right; a column whose residual after
/// projection is at most `tol` times its own norm is dropped.
pub fn orthonormalize(columns: &Matrix, tol: f64) -> Matrix {
    assert!(tol > 0.0, "orthonormalize tolerance must be positive");
    let m = columns.rows();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..columns.cols() {
        let mut c = columns.col(j);
        let original = norm(&c);
        if original == 0.0 {
            continue;
        }
        let len = orthogonalize_against(&mut c, &basis);
        if len <= tol * original {
            continue;
        }
        c.iter_mut().for_each(|x| *x /= len);
        basis.push(c);
    }
    Matrix::from_columns(m, &basis)
}

/// Extends orthonormal columns to a square orthogonal matrix.
pub(crate) fn complete_orthonormal(q: &Matrix) -> Matrix {
    let m = q.rows();
    let mut cols: Vec<Vec<f64>> = (0..q.cols()).map(|j| q.col(j)).collect();
    while cols.len() < m {
        let e = completion_vector(m, &cols);
        cols.push(e);
    }
    Matrix::from_columns(m, &cols)
}

/// `exp(H(p))` where `p_k = sigma_k / sum(sigma)` over the nonzero singular values.
pub fn effective_rank(m: &Matrix) -> Result<f64> {
    let svd = svd_deterministic(m)?;
    let top = svd.sigma.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let cutoff = top * f64::EPSILON * (m.rows().max(m.cols()) as f64);
    let kept: Vec<f64> = svd.sigma.into_iter().filter(|&s| s > cutoff).collect();
    let total: f64 = kept.iter().sum();
    let entropy: f64 = kept
        .iter()
        .map(|s| s / total)
        .map(|p| -p * p.ln())
        .sum();
    Ok(entropy.exp())
}
