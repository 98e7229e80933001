//! Symmetry-reduced attention heads.
//!
//! Gram-relational attention with frame-invariant weights, an SVD dressing
//! map for token states, invariant head composites `G_QK = W_Q^T W_K` and
//! `G_VO = W_O W_V`, and optimizers that avoid motion along the head-space
//! symmetry orbits.

pub mod attention;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod relational;
pub mod suite;
pub mod symmetry;

pub use attention::{AttentionWeights, HeadParams, Mask, ScalarScorer};
pub use error::{Error, Result};
pub use linalg::{Matrix, Svd};
pub use optim::{Batch, GradientVector, OptimizerConfig, RankMode, Scheme};
pub use relational::{DressedState, GramMatrix, TokenMatrix};
pub use symmetry::{Canonical, Charges, InvariantComposites, MultiHeadParams, TangentBasis};
