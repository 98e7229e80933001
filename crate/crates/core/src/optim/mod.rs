//! Losses, gradients and symmetry-reduced optimization schemes.
//!
//! Three schemes avoid motion along the head-space orbits:
//!
//! * projected updates remove the tangent component of the gradient
//!   ([`step_projected`]),
//! * invariant descent trains the composites `G_QK`, `G_VO` directly and
//!   keeps them representable with a rank projection
//!   ([`step_invariant_qk`], [`step_invariant_vo`]),
//! * dressed representatives take plain steps and periodically move the
//!   parameters back to a canonical orbit point ([`step_dressed`]).

mod grad;
mod schemes;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::relational::TokenMatrix;

pub use grad::{
    central_difference, grad_analytic, grad_fd, head_gradient, invariant_forward, invariant_gradient,
    invariant_loss,
    model_loss, relational_grad_analytic, relational_grad_fd, relational_loss,
};
pub use schemes::{
    apply_projected_update, charge_drift, project_gradient, step_baseline, step_dressed,
    step_invariant, step_invariant_qk, step_invariant_vo, step_projected, FactorizedComposite,
    InvariantStep,
};

/// Inputs with their regression targets, all of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    inputs: Vec<TokenMatrix>,
    targets: Vec<TokenMatrix>,
}

impl Batch {
    pub fn new(inputs: Vec<TokenMatrix>, targets: Vec<TokenMatrix>) -> Result<Self> {
        let Some(first) = inputs.first() else {
            return Err(Error::InvalidArgument("batch must be nonempty".into()));
        };
        if inputs.len() != targets.len() {
            return Err(shape_err("Batch", format!("{} targets", inputs.len()), targets.len()));
        }
        let shape = (first.n(), first.d());
        for t in inputs.iter().chain(&targets) {
            if (t.n(), t.d()) != shape {
                return Err(shape_err("Batch", format!("{shape:?}"), format!("{:?}", (t.n(), t.d()))));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &[TokenMatrix] {
        &self.inputs
    }

    pub fn targets(&self) -> &[TokenMatrix] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n(&self) -> usize {
        self.inputs[0].n()
    }

    pub fn d(&self) -> usize {
        self.inputs[0].d()
    }

    pub(crate) fn pairs(&self) -> impl Iterator<Item = (&TokenMatrix, &TokenMatrix)> {
        self.inputs.iter().zip(&self.targets)
    }
}

/// Flat gradient in the vectorization order of the active model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { context: "GradientVector" });
        }
        Ok(Self(v))
    }

    pub(crate) fn from_vec_unchecked(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.0)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        crate::linalg::dot(&self.0, other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    BaselineSgd,
    ProjectedSgd,
    InvariantDescent,
    DressedSgd,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::BaselineSgd,
        Scheme::ProjectedSgd,
        Scheme::InvariantDescent,
        Scheme::DressedSgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::BaselineSgd => "baseline_sgd",
            Scheme::ProjectedSgd => "projected_sgd",
            Scheme::InvariantDescent => "invariant_descent",
            Scheme::DressedSgd => "dressed_sgd",
        }
    }
}

/// How invariant descent keeps `G_VO` at rank `<= d_h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// Ambient step followed by truncated-SVD projection.
    #[default]
    Project,
    /// Step on a balanced `A B` factorization.
    Factorized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub scheme: Scheme,
    pub learning_rate: f64,
    pub steps: usize,
    #[serde(default = "default_redress_period")]
    pub redress_period: usize,
    #[serde(default = "default_fd_epsilon")]
    pub fd_epsilon: f64,
    #[serde(default)]
    pub rank_mode: RankMode,
}

fn default_redress_period() -> usize {
    10
}

fn default_fd_epsilon() -> f64 {
    1e-5
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::BaselineSgd,
            learning_rate: 1e-2,
            steps: 500,
            redress_period: default_redress_period(),
            fd_epsilon: default_fd_epsilon(),
            rank_mode: RankMode::Project,
        }
    }
}

impl OptimizerConfig {
    pub fn with_scheme(scheme: Scheme) -> Self {
        Self { scheme, ..Self::default() }
    }

    /// Learning rate positive and finite, `redress_period >= 1`, `fd_epsilon > 0`.
    /// A zero step count is accepted; a run then records only the initial state.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.redress_period == 0 {
            return Err(Error::InvalidConfig("redress_period must be >= 1".into()));
        }
        if self.fd_epsilon.is_nan() || self.fd_epsilon <= 0.0 {
            return Err(Error::InvalidConfig("fd_epsilon must be > 0".into()));
        }
        Ok(())
    }
}
