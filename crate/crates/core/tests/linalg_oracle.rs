//! Cross-checks of the hand-written kernels against nalgebra.

use nalgebra::DMatrix;
use proptest::prelude::*;
use relsym_core::linalg::random::{gaussian_matrix, random_antisymmetric, rng};
use relsym_core::linalg::{
    effective_rank, exp_antisymmetric, inverse, project_rank, solve, svd_deterministic, symmetric_eigenvalues,
};
use relsym_core::Matrix;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn arb_matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })
}

fn arb_square(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max).prop_flat_map(|n| {
        prop::collection::vec(-5.0f64..5.0, n * n).prop_map(move |v| Matrix::new(n, n, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn singular_values_match(m in arb_matrix(9)) {
        let ours = svd_deterministic(&m).unwrap();
        let mut theirs = to_na(&m).singular_values().as_slice().to_vec();
        theirs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let scale = theirs[0].max(1.0);
        prop_assert_eq!(ours.sigma.len(), theirs.len());
        for (a, b) in ours.sigma.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-10 * scale, "{} vs {}", a, b);
        }
        prop_assert!(ours.reconstruct().distance(&m) <= 1e-10 * scale * (m.rows() * m.cols()) as f64);
        prop_assert!(ours.u.orthonormality_defect() <= 1e-10);
        prop_assert!(ours.v.orthonormality_defect() <= 1e-10);
    }

    #[test]
    fn left_vectors_follow_sign_rule(m in arb_matrix(8)) {
        let s = svd_deterministic(&m).unwrap();
        for k in 0..s.sigma.len() {
            let col = s.u.col(k);
            let mut best = 0;
            for (i, v) in col.iter().enumerate() {
                if v.abs() > col[best].abs() {
                    best = i;
                }
            }
            prop_assert!(col[best] >= 0.0);
        }
    }

    #[test]
    fn eckart_young_error(m in arb_matrix(7), k in 0usize..7) {
        let s = svd_deterministic(&m).unwrap();
        let r = project_rank(&m, k).unwrap().matrix;
        let tail: f64 = s.sigma.iter().skip(k).map(|x| x * x).sum();
        let err = r.distance(&m);
        prop_assert!((err * err - tail).abs() <= 1e-9 * (1.0 + tail));
    }

    #[test]
    fn eigenvalues_match(m in arb_square(8)) {
        let sym = m.symmetrized();
        let ours = symmetric_eigenvalues(&sym).unwrap();
        let mut theirs = to_na(&sym).symmetric_eigen().eigenvalues.as_slice().to_vec();
        theirs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ours.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn solve_matches_lu(m in arb_square(7), seed in any::<u64>()) {
        let b = gaussian_matrix(m.rows(), 2, 1.0, &mut rng(seed));
        let Some(reference) = to_na(&m).lu().solve(&to_na(&b)) else { return Ok(()); };
        let cond = svd_deterministic(&m).unwrap().condition_number();
        prop_assume!(cond < 1e8);
        let ours = solve(&m, &b).unwrap();
        let scale = from_na(&reference).max_abs().max(1.0);
        prop_assert!(ours.max_abs_diff(&from_na(&reference)) <= 1e-14 * cond * scale * 10.0);
        let inv = inverse(&m).unwrap();
        prop_assert!(inv.matmul(&m).max_abs_diff(&Matrix::identity(m.rows())) <= 1e-14 * cond * 10.0);
    }

    #[test]
    fn rotation_exponential_matches(n in 1usize..7, scale in 0.01f64..4.0, seed in any::<u64>()) {
        let a = random_antisymmetric(n, scale, &mut rng(seed));
        let ours = exp_antisymmetric(&a).unwrap();
        let theirs = from_na(&to_na(&a).exp());
        prop_assert!(ours.max_abs_diff(&theirs) <= 1e-11);
        prop_assert!(ours.orthonormality_defect() <= 1e-12);
    }

    #[test]
    fn effective_rank_is_bounded_by_rank(m in arb_matrix(8)) {
        prop_assume!(m.max_abs() > 0.0);
        let r = effective_rank(&m).unwrap();
        let rank = svd_deterministic(&m).unwrap().numerical_rank() as f64;
        prop_assert!(r >= 1.0 - 1e-12 && r <= rank + 1e-9);
    }
}

#[test]
fn tall_rank_deficient_against_reference() {
    let mut r = rng(11);
    let m = gaussian_matrix(12, 3, 1.0, &mut r).matmul(&gaussian_matrix(3, 7, 1.0, &mut r));
    let ours = svd_deterministic(&m).unwrap();
    let theirs = to_na(&m).singular_values();
    let mut theirs = theirs.as_slice().to_vec();
    theirs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (a, b) in ours.sigma.iter().zip(&theirs) {
        assert!((a - b).abs() <= 1e-10 * theirs[0]);
    }
    assert_eq!(ours.numerical_rank(), 3);
}
