//! Forward passes: the standard dot-product head and Gram-relational attention.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::random::{gaussian_matrix, Rng};
use crate::linalg::Matrix;
use crate::relational::{gram, GramMatrix, TokenMatrix};

/// Score assigned to masked positions before the softmax.
pub const MASK_SENTINEL: f64 = -1e30;

/// Parameters of one attention head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `d_h x d`
    pub w_q: Matrix,
    /// `d_h x d`
    pub w_k: Matrix,
    /// `d_h x d`
    pub w_v: Matrix,
    /// `d x d_h`
    pub w_o: Matrix,
}

impl HeadParams {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix, w_o: Matrix) -> Result<Self> {
        let (d_h, d) = w_q.shape();
        for (name, m) in [("w_k", &w_k), ("w_v", &w_v)] {
            if m.shape() != (d_h, d) {
                return Err(shape_err("HeadParams", format!("{name} {d_h}x{d}"), format!("{:?}", m.shape())));
            }
        }
        if w_o.shape() != (d, d_h) {
            return Err(shape_err("HeadParams", format!("w_o {d}x{d_h}"), format!("{:?}", w_o.shape())));
        }
        if d == 0 || d_h == 0 {
            return Err(Error::InvalidArgument("head dimensions must be >= 1".into()));
        }
        let p = Self { w_q, w_k, w_v, w_o };
        if !p.is_finite() {
            return Err(Error::NonFinite { context: "HeadParams" });
        }
        Ok(p)
    }

    /// Gaussian entries with standard deviation `scale`.
    pub fn random(d: usize, d_h: usize, scale: f64, rng: &mut Rng) -> Self {
        Self {
            w_q: gaussian_matrix(d_h, d, scale, rng),
            w_k: gaussian_matrix(d_h, d, scale, rng),
            w_v: gaussian_matrix(d_h, d, scale, rng),
            w_o: gaussian_matrix(d, d_h, scale, rng),
        }
    }

    pub fn zeros(d: usize, d_h: usize) -> Self {
        Self {
            w_q: Matrix::zeros(d_h, d),
            w_k: Matrix::zeros(d_h, d),
            w_v: Matrix::zeros(d_h, d),
            w_o: Matrix::zeros(d, d_h),
        }
    }

    /// Model dimension.
    pub fn d(&self) -> usize {
        self.w_q.cols()
    }

    /// Head dimension.
    pub fn d_h(&self) -> usize {
        self.w_q.rows()
    }

    pub fn is_finite(&self) -> bool {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o].iter().all(|m| m.is_finite())
    }

    /// Total number of scalar parameters, `4 d d_h`.
    pub fn param_count(&self) -> usize {
        4 * self.d() * self.d_h()
    }

    /// Concatenation of `(W_Q, W_K, W_V, W_O)`, each row-major.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for m in [&self.w_q, &self.w_k, &self.w_v, &self.w_o] {
            v.extend_from_slice(m.as_slice());
        }
        v
    }

    /// Inverse of [`HeadParams::to_vec`].
    pub fn from_vec(d: usize, d_h: usize, v: &[f64]) -> Result<Self> {
        let block = d * d_h;
        if v.len() != 4 * block {
            return Err(shape_err("HeadParams::from_vec", 4 * block, v.len()));
        }
        let part = |k: usize| v[k * block..(k + 1) * block].to_vec();
        Self::new(
            Matrix::new(d_h, d, part(0))?,
            Matrix::new(d_h, d, part(1))?,
            Matrix::new(d_h, d, part(2))?,
            Matrix::new(d, d_h, part(3))?,
        )
    }

    /// Largest entrywise difference over all four blocks.
    pub fn max_abs_diff(&self, other: &HeadParams) -> f64 {
        self.w_q
            .max_abs_diff(&other.w_q)
            .max(self.w_k.max_abs_diff(&other.w_k))
            .max(self.w_v.max_abs_diff(&other.w_v))
            .max(self.w_o.max_abs_diff(&other.w_o))
    }
}

/// One-hidden-layer tanh network `f: R^3 -> R` applied to relational triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarScorer {
    /// `h x 3`
    pub layer1_weights: Matrix,
    pub layer1_bias: Vec<f64>,
    pub layer2_weights: Vec<f64>,
    pub layer2_bias: f64,
}

impl ScalarScorer {
    pub const DEFAULT_WIDTH: usize = 16;

    pub fn new(layer1_weights: Matrix, layer1_bias: Vec<f64>, layer2_weights: Vec<f64>, layer2_bias: f64) -> Result<Self> {
        let h = layer1_weights.rows();
        if h == 0 || layer1_weights.cols() != 3 || layer1_bias.len() != h || layer2_weights.len() != h {
            return Err(shape_err(
                "ScalarScorer",
                "layer1 hx3, bias h, layer2 h with h >= 1",
                format!("{:?}, {}, {}", layer1_weights.shape(), layer1_bias.len(), layer2_weights.len()),
            ));
        }
        let s = Self { layer1_weights, layer1_bias, layer2_weights, layer2_bias };
        if !s.to_vec().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "ScalarScorer" });
        }
        Ok(s)
    }

    pub fn zeros(hidden_width: usize) -> Self {
        Self {
            layer1_weights: Matrix::zeros(hidden_width, 3),
            layer1_bias: vec![0.0; hidden_width],
            layer2_weights: vec![0.0; hidden_width],
            layer2_bias: 0.0,
        }
    }

    /// Gaussian init with fan-in scaling.
    pub fn random(hidden_width: usize, rng: &mut Rng) -> Self {
        let w1 = gaussian_matrix(hidden_width, 3, 1.0 / 3f64.sqrt(), rng);
        let b1 = gaussian_matrix(1, hidden_width, 0.1, rng).into_vec();
        let w2 = gaussian_matrix(1, hidden_width, 1.0 / (hidden_width as f64).sqrt(), rng).into_vec();
        let b2 = gaussian_matrix(1, 1, 0.1, rng)[(0, 0)];
        Self { layer1_weights: w1, layer1_bias: b1, layer2_weights: w2, layer2_bias: b2 }
    }

    pub fn hidden_width(&self) -> usize {
        self.layer1_weights.rows()
    }

    /// `5h + 1`
    pub fn param_count(&self) -> usize {
        5 * self.hidden_width() + 1
    }

    /// `(W1 row-major, b1, w2, b2)`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(self.layer1_weights.as_slice());
        v.extend_from_slice(&self.layer1_bias);
        v.extend_from_slice(&self.layer2_weights);
        v.push(self.layer2_bias);
        v
    }

    pub fn from_vec(hidden_width: usize, v: &[f64]) -> Result<Self> {
        let h = hidden_width;
        if v.len() != 5 * h + 1 {
            return Err(shape_err("ScalarScorer::from_vec", 5 * h + 1, v.len()));
        }
        Self::new(
            Matrix::new(h, 3, v[..3 * h].to_vec())?,
            v[3 * h..4 * h].to_vec(),
            v[4 * h..5 * h].to_vec(),
            v[5 * h],
        )
    }

    /// Hidden activations `tanh(W1 t + b1)`.
    pub(crate) fn hidden(&self, triple: (f64, f64, f64)) -> Vec<f64> {
        let t = [triple.0, triple.1, triple.2];
        (0..self.hidden_width())
            .map(|k| {
                let w = self.layer1_weights.row(k);
                (w[0] * t[0] + w[1] * t[1] + w[2] * t[2] + self.layer1_bias[k]).tanh()
            })
            .collect()
    }
}

/// `layer2 . tanh(layer1 t + bias1) + bias2`
pub fn scorer_eval(f: &ScalarScorer, triple: (f64, f64, f64)) -> f64 {
    let h = f.hidden(triple);
    h.iter().zip(&f.layer2_weights).map(|(a, b)| a * b).sum::<f64>() + f.layer2_bias
}

/// Row-stochastic attention matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights(Matrix);

impl AttentionWeights {
    /// Validates nonnegative entries with rows summing to one within 1e-12.
    pub fn new(a: Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(shape_err("AttentionWeights", "square", format!("{:?}", a.shape())));
        }
        for i in 0..a.rows() {
            let row = a.row(i);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("attention row {i} is not stochastic")));
            }
        }
        Ok(Self(a))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mask {
    #[default]
    None,
    Causal,
}

/// Replaces scores above the diagonal (`j > i`) by [`MASK_SENTINEL`].
pub fn causal_mask(scores: &Matrix) -> Result<Matrix> {
    if !scores.is_square() {
        return Err(shape_err("causal_mask", "square scores", format!("{:?}", scores.shape())));
    }
    let mut m = scores.clone();
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            m[(i, j)] = MASK_SENTINEL;
        }
    }
    Ok(m)
}

/// Softmax of each row with max subtraction.
pub fn softmax_rows(scores: &Matrix) -> Matrix {
    let mut out = scores.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn apply_mask(scores: Matrix, mask: Mask) -> Matrix {
    match mask {
        Mask::None => scores,
        Mask::Causal => causal_mask(&scores).expect("score matrix is square"),
    }
}

/// Raw scores `s_ij = (W_Q x_i)^T (W_K x_j)` (before the `1/sqrt(d_h)` scaling).
pub fn dot_head_scores(x: &TokenMatrix, p: &HeadParams) -> Result<Matrix> {
    check_head_input(x, p)?;
    let q = x.matrix().matmul_t(&p.w_q);
    let k = x.matrix().matmul_t(&p.w_k);
    Ok(q.matmul_t(&k))
}

fn check_head_input(x: &TokenMatrix, p: &HeadParams) -> Result<()> {
    if x.d() != p.d() {
        return Err(shape_err("dot_head_forward", format!("d = {}", p.d()), format!("d = {}", x.d())));
    }
    Ok(())
}

/// Standard head: `A = softmax(S / sqrt(d_h))`, `h_i = sum_j A_ij W_V x_j`,
/// `y_i = W_O h_i`.
pub fn dot_head_forward(x: &TokenMatrix, p: &HeadParams) -> Result<(TokenMatrix, AttentionWeights)> {
    dot_head_forward_masked(x, p, Mask::None)
}

pub fn dot_head_forward_masked(x: &TokenMatrix, p: &HeadParams, mask: Mask) -> Result<(TokenMatrix, AttentionWeights)> {
    let scores = dot_head_scores(x, p)?.scale(1.0 / (p.d_h() as f64).sqrt());
    let a = softmax_rows(&apply_mask(scores, mask));
    let v = x.matrix().matmul_t(&p.w_v);
    let h = a.matmul(&v);
    let y = h.matmul_t(&p.w_o);
    Ok((TokenMatrix::new(y)?, AttentionWeights(a)))
}

/// Relational scores `s_ij = f(G_ij, G_ii, G_jj)`.
pub fn relational_scores(g: &GramMatrix, f: &ScalarScorer) -> Matrix {
    let m = g.matrix();
    let n = g.n();
    Matrix::from_fn(n, n, |i, j| scorer_eval(f, (m[(i, j)], m[(i, i)], m[(j, j)])))
}

/// Gram-relational attention: `A = softmax(s / tau)` with scores from the
/// Gram invariants, `Y = A X`.
pub fn relational_forward(x: &TokenMatrix, f: &ScalarScorer, tau: f64) -> Result<(TokenMatrix, AttentionWeights)> {
    relational_forward_masked(x, f, tau, Mask::None)
}

pub fn relational_forward_masked(
    x: &TokenMatrix,
    f: &ScalarScorer,
    tau: f64,
    mask: Mask,
) -> Result<(TokenMatrix, AttentionWeights)> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let g = gram(x);
    let scores = relational_scores(&g, f).scale(1.0 / tau);
    let a = softmax_rows(&apply_mask(scores, mask));
    let y = a.matmul(x.matrix());
    Ok((TokenMatrix::new(y)?, AttentionWeights(a)))
}

/// Invariant state update `G+ = A G A^T`.
pub fn propagate_gram(a: &AttentionWeights, g: &GramMatrix) -> Result<GramMatrix> {
    if a.matrix().rows() != g.n() {
        return Err(shape_err("propagate_gram", format!("{}x{}", g.n(), g.n()), format!("{:?}", a.matrix().shape())));
    }
    let agat = a.matrix().matmul(g.matrix()).matmul_t(a.matrix());
    Ok(GramMatrix::from_symmetric_unchecked(agat.symmetrized()))
}
