//! Acceptance suite: every criterion at its stated tolerance.
//!
//! Runs without the libtest harness so it prints exactly one PASS/FAIL line
//! per criterion. The bounds below are pinned here independently of the
//! library so that a loosened library bound fails this target.

use std::process::ExitCode;
use std::time::Instant;

use relsym_core::suite::{run_criterion, Bound, SuiteOptions, CRITERIA};

const PINNED: &[(&str, &str, Bound)] = &[
    ("gram_invariance", "max_relative_change", Bound::AtMost(1e-10)),
    ("relational_attention", "weights_max_diff", Bound::AtMost(1e-12)),
    ("relational_attention", "output_equivariance", Bound::AtMost(1e-10)),
    ("relational_attention", "propagate_gram_consistency", Bound::AtMost(1e-10)),
    ("head_orbits", "qk_orthogonal_moves", Bound::AtMost(1e-9)),
    ("head_orbits", "vo_general_linear_moves", Bound::AtMost(1e-9)),
    ("head_orbits", "vo_move_max_condition", Bound::AtMost(100.0)),
    ("head_orbits", "head_permutations", Bound::AtMost(1e-9)),
    ("dressing", "simple_spectrum_trials", Bound::AtLeast(100.0)),
    ("dressing", "x_hat_invariance", Bound::AtMost(1e-8)),
    ("dressing", "degenerate_flagged_fraction", Bound::AtLeast(1.0)),
    ("gradients", "dot_head_relative_error", Bound::AtMost(1e-5)),
    ("gradients", "relational_relative_error", Bound::AtMost(1e-5)),
    ("projector", "idempotence", Bound::AtMost(1e-10)),
    ("projector", "tangent_leak_over_norm", Bound::AtMost(1e-10)),
    ("projector", "tangent_derivative_over_grad_norm", Bound::AtMost(1e-8)),
    ("invariant_descent", "orbit_trajectory_max_diff", Bound::AtMost(1e-8)),
    ("invariant_descent", "projection_win_fraction", Bound::AtLeast(1.0)),
    ("charge_drift_scaling", "seeds_in_range", Bound::AtLeast(10.0)),
    ("charge_drift_scaling", "min_slope", Bound::Within(0.8, 1.2)),
    ("charge_drift_scaling", "max_slope", Bound::Within(0.8, 1.2)),
    ("canonicalization", "idempotence", Bound::AtMost(1e-10)),
    ("canonicalization", "composites_preserved", Bound::AtMost(1e-9)),
    ("canonicalization", "loss_preserved", Bound::AtMost(1e-9)),
    ("canonicalization", "balanced_q_vo", Bound::AtMost(1e-9)),
    ("harness", "byte_identical_reruns", Bound::AtLeast(1.0)),
    ("harness", "frame_robustness_max_diff", Bound::AtMost(1e-8)),
    ("harness", "schemes_with_variance_stats", Bound::AtLeast(4.0)),
];

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let opts = SuiteOptions { scratch: Some(scratch.path().to_owned()), threads: None };
    let started = Instant::now();
    let mut failed = 0;

    for (i, key) in CRITERIA.iter().enumerate() {
        let t = Instant::now();
        let report = run_criterion(key, &opts).expect("criterion is registered");
        let mut problems = Vec::new();
        for &(_, name, bound) in PINNED.iter().filter(|(k, _, _)| k == key) {
            match report.check(name) {
                None => problems.push(format!("missing check {name}")),
                Some(c) if c.bound != bound => problems.push(format!("{name} bound changed to {}", c.bound)),
                Some(c) if !bound.holds(c.value) => problems.push(format!("{name} = {:e} violates {bound}", c.value)),
                Some(_) => {}
            }
        }
        let ok = report.passed() && problems.is_empty();
        failed += !ok as usize;
        println!("[{:>2}/{}] {report} [{:.1}s]", i + 1, CRITERIA.len(), t.elapsed().as_secs_f64());
        for p in problems {
            println!("        pinned: {p}");
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        CRITERIA.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
