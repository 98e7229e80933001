//! Shared fixtures for the criterion benches.

use relsym_core::harness::{generate_task, ExperimentConfig};
use relsym_core::linalg::random::{gaussian_matrix, rng, rng_stream};
use relsym_core::{Batch, HeadParams, Matrix, ScalarScorer, TokenMatrix};

/// Gaussian `rows x cols` matrix.
pub fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    gaussian_matrix(rows, cols, 1.0, &mut rng(seed))
}

pub fn tokens(n: usize, d: usize, seed: u64) -> TokenMatrix {
    TokenMatrix::new(matrix(n, d, seed)).expect("gaussian entries are finite")
}

/// Default-shape teacher-student batch with a student head.
pub fn dot_problem(seed: u64) -> (HeadParams, Batch) {
    let cfg = ExperimentConfig::default();
    let task = generate_task(&cfg, seed).expect("default config is valid");
    let student = HeadParams::random(cfg.d, cfg.d_h, 1.0 / (cfg.d as f64).sqrt(), &mut rng_stream(seed, 1));
    (student, task.batch)
}

pub fn scorer(seed: u64) -> ScalarScorer {
    ScalarScorer::random(ScalarScorer::DEFAULT_WIDTH, &mut rng(seed))
}
