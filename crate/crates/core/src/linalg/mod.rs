//! Dense linear-algebra kernels shared by every other module.

mod decomp;
mod matrix;
pub mod random;
mod svd;

pub use decomp::{
    effective_rank, exp_antisymmetric, inverse, orthonormalize, solve, symmetric_eigenvalues,
};
pub(crate) use decomp::complete_orthonormal;
pub use matrix::{dot, norm, Matrix};
pub use random::{random_invertible, random_orthogonal};
pub use svd::{
    is_simple_spectrum, project_rank, svd_deterministic, RankProjection, Svd, MAX_SWEEPS,
    SIMPLE_SPECTRUM_GAP,
};
