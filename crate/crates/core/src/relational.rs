//! Frame-invariant representation of token states.
//!
//! Under a change of model-space frame `X -> X U^T` with `U` in `O(d)` the
//! Gram matrix `G = X X^T` is unchanged. The SVD dressing field
//! `u[X] = V_X^T` transforms as `u[X U^T] = u[X] U^T`, so the dressed
//! representative `X u[X]^{-1} = U_X Σ_X` is invariant as well, on the open
//! set where the singular spectrum is simple.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complete_orthonormal, dot, svd_deterministic, symmetric_eigenvalues, Matrix};

/// Hidden states of one sequence, one token per row (`n x d`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMatrix(Matrix);

impl TokenMatrix {
    pub fn new(x: Matrix) -> Result<Self> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "token matrix needs n, d >= 1, got {}x{}",
                x.rows(),
                x.cols()
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite { context: "TokenMatrix" });
        }
        Ok(Self(x))
    }

    /// Sequence length.
    pub fn n(&self) -> usize {
        self.0.rows()
    }

    /// Model dimension.
    pub fn d(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// `X U^T`, the same states expressed in a rotated model-space frame.
    pub fn reframe(&self, u: &Matrix) -> TokenMatrix {
        TokenMatrix(self.0.matmul_t(u))
    }
}

impl AsRef<Matrix> for TokenMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

/// Symmetric positive semidefinite `n x n` relational state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix(Matrix);

impl GramMatrix {
    /// Validates symmetry (1e-12) and positivity (smallest eigenvalue at
    /// least `-1e-9 * trace`).
    pub fn new(g: Matrix) -> Result<Self> {
        if !g.is_square() {
            return Err(crate::error::shape_err("GramMatrix", "square", format!("{:?}", g.shape())));
        }
        let asym = g.asymmetry();
        if asym > 1e-12 * g.frobenius_norm().max(1.0) {
            return Err(Error::InvalidArgument(format!("Gram matrix not symmetric ({asym:e})")));
        }
        let g = GramMatrix(g);
        let min = g.min_eigenvalue()?;
        let trace = g.0.trace();
        if min < -1e-9 * trace.max(0.0) {
            return Err(Error::InvalidArgument(format!(
                "Gram matrix not positive semidefinite (min eigenvalue {min:e})"
            )));
        }
        Ok(g)
    }

    pub(crate) fn from_symmetric_unchecked(g: Matrix) -> Self {
        GramMatrix(g)
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(symmetric_eigenvalues(&self.0)?.first().copied().unwrap_or(0.0))
    }
}

/// `G = X X^T`; `g_ij = <x_i, x_j>`, filled symmetrically.
pub fn gram(x: &TokenMatrix) -> GramMatrix {
    let m = x.matrix();
    let n = m.rows();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(m.row(i), m.row(j));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    GramMatrix(g)
}

/// `(G_ij, G_ii, G_jj)`, the input of the relational scorer.
pub fn relational_triple(g: &GramMatrix, i: usize, j: usize) -> Result<(f64, f64, f64)> {
    let n = g.n();
    for idx in [i, j] {
        if idx >= n {
            return Err(Error::IndexOutOfRange { index: idx, len: n });
        }
    }
    let m = g.matrix();
    Ok((m[(i, j)], m[(i, i)], m[(j, j)]))
}

/// Dressed representative of a token matrix.
#[derive(Debug, Clone)]
pub struct DressedState {
    /// `X u^{-1} = X V_X`, `n x d`.
    pub x_hat: Matrix,
    /// Dressing field `u[X] = V_X^T`, `d x d` orthogonal.
    pub u: Matrix,
    /// Spectrum not simple, or `rank(X) < d`: `u` is not uniquely defined.
    pub degenerate: bool,
}

/// SVD dressing. When `n < d` the right factor is completed to a square
/// orthogonal matrix; the completion directions carry zero columns of `x_hat`.
pub fn dress(x: &TokenMatrix) -> Result<DressedState> {
    let svd = svd_deterministic(x.matrix())?;
    let d = x.d();
    let degenerate = !svd.is_simple() || svd.numerical_rank() < d;
    let v = complete_orthonormal(&svd.v);
    let x_hat = x.matrix().matmul(&v);
    Ok(DressedState { x_hat, u: v.t(), degenerate })
}

/// `|gram(x_hat) - gram(x)|_F`; vanishes up to roundoff since dressing is a
/// right multiplication by an orthogonal matrix.
pub fn gram_residual(x: &TokenMatrix) -> Result<f64> {
    let dressed = dress(x)?;
    let g_hat = gram(&TokenMatrix(dressed.x_hat));
    Ok(g_hat.matrix().distance(gram(x).matrix()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::{gaussian_matrix, rng};
    use crate::linalg::random_orthogonal;

    fn tm(rows: &[&[f64]]) -> TokenMatrix {
        TokenMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn gram_examples() {
        assert_eq!(gram(&TokenMatrix::new(Matrix::identity(2)).unwrap()).matrix(), &Matrix::identity(2));
        let g = gram(&tm(&[&[1.0, 0.0], &[1.0, 0.0]]));
        assert_eq!(g.matrix(), &Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap());
    }

    #[test]
    fn gram_is_frame_invariant() {
        let mut r = rng(4);
        let x = TokenMatrix::new(gaussian_matrix(6, 4, 1.0, &mut r)).unwrap();
        let u = random_orthogonal(4, 9);
        let g = gram(&x);
        assert!(gram(&x.reframe(&u)).matrix().distance(g.matrix()) <= 1e-10 * g.matrix().frobenius_norm());
    }

    #[test]
    fn gram_validation() {
        assert!(GramMatrix::new(Matrix::identity(3)).is_ok());
        assert!(GramMatrix::new(Matrix::diag(&[1.0, -1.0])).is_err());
        assert!(GramMatrix::new(Matrix::from_rows(&[&[1.0, 0.5], &[0.0, 1.0]]).unwrap()).is_err());
    }

    #[test]
    fn triples() {
        let g = GramMatrix::new(Matrix::identity(2)).unwrap();
        assert_eq!(relational_triple(&g, 0, 1).unwrap(), (0.0, 1.0, 1.0));
        assert_eq!(relational_triple(&g, 0, 0).unwrap(), (1.0, 1.0, 1.0));
        assert!(matches!(relational_triple(&g, 2, 0), Err(Error::IndexOutOfRange { index: 2, len: 2 })));
        let mut r = rng(1);
        let g = gram(&TokenMatrix::new(gaussian_matrix(4, 3, 1.0, &mut r)).unwrap());
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(relational_triple(&g, i, j).unwrap().0, relational_triple(&g, j, i).unwrap().0);
            }
        }
    }

    #[test]
    fn dress_positive_diagonal_is_fixed() {
        let x = tm(&[&[3.0, 0.0], &[0.0, 1.0]]);
        let dressed = dress(&x).unwrap();
        assert_eq!(dressed.u, Matrix::identity(2));
        assert_eq!(dressed.x_hat, *x.matrix());
        assert!(!dressed.degenerate);
    }

    #[test]
    fn dress_flags_rank_deficiency() {
        let x = tm(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], &[-1.0, -2.0, -3.0]]);
        let dressed = dress(&x).unwrap();
        assert!(dressed.degenerate);
        assert!(dressed.u.orthonormality_defect() < 1e-10);
        let repeated = tm(&[&[1.0, 0.5], &[1.0, 0.5]]);
        assert!(dress(&repeated).unwrap().degenerate);
    }

    #[test]
    fn dress_contract_on_random_input() {
        let mut r = rng(2);
        let x = TokenMatrix::new(gaussian_matrix(5, 3, 1.0, &mut r)).unwrap();
        let dressed = dress(&x).unwrap();
        assert!(!dressed.degenerate);
        assert!(dressed.u.orthonormality_defect() <= 1e-10);
        assert!(dressed.x_hat.distance(&x.matrix().matmul_t(&dressed.u)) <= 1e-10);

        let u = random_orthogonal(3, 5);
        let moved = dress(&x.reframe(&u)).unwrap();
        assert!(moved.x_hat.distance(&dressed.x_hat) <= 1e-8);
        assert!(moved.u.distance(&dressed.u.matmul_t(&u)) <= 1e-8);
    }

    #[test]
    fn gram_residual_vanishes() {
        assert!(gram_residual(&TokenMatrix::new(Matrix::identity(3)).unwrap()).unwrap() <= 1e-12);
        let mut r = rng(3);
        let m = gaussian_matrix(6, 4, 1.0, &mut r);
        let x = TokenMatrix::new(m.clone()).unwrap();
        assert!(gram_residual(&x).unwrap() <= 1e-9);
        let big = TokenMatrix::new(m.scale(10.0)).unwrap();
        let g_norm = gram(&big).matrix().frobenius_norm();
        assert!(gram_residual(&big).unwrap() <= 1e-8 * g_norm);
    }
}
