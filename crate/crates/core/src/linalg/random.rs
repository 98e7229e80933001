//! Seeded generators for test matrices and group elements.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::Matrix;
use super::svd::{completion_vector, orthogonalize_against, svd_deterministic};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn gaussian(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Matrix with i.i.d. `N(0, scale^2)` entries.
pub fn gaussian_matrix(rows: usize, cols: usize, scale: f64, r: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * gaussian(r))
}

/// Haar-distributed element of `O(dim)` (both determinant signs occur).
pub fn random_orthogonal(dim: usize, seed: u64) -> Matrix {
    random_orthogonal_with(dim, &mut rng(seed))
}

/// Gaussian fill followed by Gram-Schmidt; the implied `R` factor has a
/// positive diagonal.
pub fn random_orthogonal_with(dim: usize, r: &mut Rng) -> Matrix {
    assert!(dim >= 1, "random_orthogonal needs dim >= 1");
    let g = gaussian_matrix(dim, dim, 1.0, r);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut c = g.col(j);
        let len = orthogonalize_against(&mut c, &cols);
        if len > 1e-8 {
            c.iter_mut().for_each(|x| *x /= len);
        } else {
            c = completion_vector(dim, &cols);
        }
        cols.push(c);
    }
    Matrix::from_columns(dim, &cols)
}

/// Random element of `GL(dim)` with `sigma_max / sigma_min <= condition_cap`.
pub fn random_invertible(dim: usize, seed: u64, condition_cap: f64) -> Matrix {
    random_invertible_with(dim, &mut rng(seed), condition_cap)
}

/// Gaussian fill; singular values below `sigma_1 / cap` are lifted so the
/// returned matrix meets the cap.
pub fn random_invertible_with(dim: usize, r: &mut Rng, condition_cap: f64) -> Matrix {
    assert!(dim >= 1, "random_invertible needs dim >= 1");
    assert!(condition_cap >= 1.0, "condition_cap must be >= 1");
    loop {
        let g = gaussian_matrix(dim, dim, 1.0, r);
        let Ok(svd) = svd_deterministic(&g) else {
            continue;
        };
        let top = svd.sigma[0];
        if top == 0.0 {
            continue;
        }
        if svd.condition_number() <= condition_cap {
            return g;
        }
        let floor = top * (1.0 + 1e-9) / condition_cap;
        let lifted: Vec<f64> = svd.sigma.iter().map(|&s| s.max(floor)).collect();
        let us = Matrix::from_fn(dim, dim, |i, k| svd.u[(i, k)] * lifted[k]);
        return us.matmul_t(&svd.v);
    }
}

/// Random antisymmetric matrix with Gaussian upper triangle.
pub fn random_antisymmetric(dim: usize, scale: f64, r: &mut Rng) -> Matrix {
    let mut a = Matrix::zeros(dim, dim);
    for i in 0..dim {
        for j in (i + 1)..dim {
            let v = scale * gaussian(r);
            a[(i, j)] = v;
            a[(j, i)] = -v;
        }
    }
    a
}

/// Random permutation of `0..n` (Fisher-Yates).
pub fn random_permutation(n: usize, r: &mut Rng) -> Vec<usize> {
    use rand::Rng as _;
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        p.swap(i, j);
    }
    p
}
