//! Head-space symmetries of an attention head.
//!
//! A single head is invariant under `(W_Q, W_K) -> (S W_Q, S W_K)` for `S` in
//! `O(d_h)` and under `(W_V, W_O) -> (S^{-1} W_V, W_O S)` for `S` in
//! `GL(d_h)`; a multi-head layer is additionally invariant under head
//! permutations. The functionally relevant coordinates are the composites
//! `G_QK = W_Q^T W_K` and `G_VO = W_O W_V`, both of rank at most `d_h`.
//!
//! Parameter vectors use the order of [`HeadParams::to_vec`]:
//! `(W_Q, W_K, W_V, W_O)`, each row-major. Orthogonality of tangent
//! directions is measured in the Euclidean metric on that vector.

use serde::{Deserialize, Serialize};

use crate::attention::{dot_head_forward, HeadParams};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{inverse, is_simple_spectrum, orthonormalize, svd_deterministic, Matrix};
use crate::relational::TokenMatrix;

/// Label of the parameter-space metric used for every projection.
pub const METRIC_SPACE: &str = "euclidean";

/// Tolerance used when orthonormalizing tangent generators.
pub const TANGENT_TOL: f64 = 1e-10;

/// Invariant coordinates of one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantComposites {
    /// `W_Q^T W_K`, `d x d`
    pub g_qk: Matrix,
    /// `W_O W_V`, `d x d`
    pub g_vo: Matrix,
    pub d_h: usize,
}

impl InvariantComposites {
    pub fn of(p: &HeadParams) -> Self {
        Self { g_qk: composite_qk(p), g_vo: composite_vo(p), d_h: p.d_h() }
    }

    /// `sigma_{d_h+1} <= 1e-9 sigma_1` for both composites.
    pub fn rank_bound_holds(&self) -> Result<bool> {
        Ok(rank_tail(&self.g_qk, self.d_h)? <= 1e-9 && rank_tail(&self.g_vo, self.d_h)? <= 1e-9)
    }
}

/// `sigma_{k+1} / sigma_1`, zero when the matrix has no such singular value.
pub fn rank_tail(m: &Matrix, k: usize) -> Result<f64> {
    let s = svd_deterministic(m)?.sigma;
    if k >= s.len() || s[0] == 0.0 {
        return Ok(0.0);
    }
    Ok(s[k] / s[0])
}

pub fn composite_qk(p: &HeadParams) -> Matrix {
    p.w_q.t_matmul(&p.w_k)
}

pub fn composite_vo(p: &HeadParams) -> Matrix {
    p.w_o.matmul(&p.w_v)
}

/// `(W_Q, W_K) -> (S W_Q, S W_K)` with `S` orthogonal.
pub fn act_qk(p: &HeadParams, s: &Matrix) -> Result<HeadParams> {
    check_head_square(p, s, "act_qk")?;
    let residual = s.matmul_t(s).distance(&Matrix::identity(s.rows()));
    if residual > 1e-10 {
        return Err(Error::NotOrthogonal { residual });
    }
    Ok(HeadParams {
        w_q: s.matmul(&p.w_q),
        w_k: s.matmul(&p.w_k),
        w_v: p.w_v.clone(),
        w_o: p.w_o.clone(),
    })
}

/// `(W_V, W_O) -> (S^{-1} W_V, W_O S)` with `S` invertible (condition at most 1e6).
pub fn act_vo(p: &HeadParams, s: &Matrix) -> Result<HeadParams> {
    check_head_square(p, s, "act_vo")?;
    let condition = svd_deterministic(s)?.condition_number();
    if condition > 1e6 {
        return Err(Error::Singular { condition });
    }
    let s_inv = inverse(s)?;
    Ok(HeadParams {
        w_q: p.w_q.clone(),
        w_k: p.w_k.clone(),
        w_v: s_inv.matmul(&p.w_v),
        w_o: p.w_o.matmul(s),
    })
}

fn check_head_square(p: &HeadParams, s: &Matrix, op: &'static str) -> Result<()> {
    let dh = p.d_h();
    if s.shape() != (dh, dh) {
        return Err(shape_err(op, format!("{dh}x{dh}"), format!("{:?}", s.shape())));
    }
    Ok(())
}

/// `H` heads sharing `(d, d_h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadParams {
    heads: Vec<HeadParams>,
}

impl MultiHeadParams {
    pub fn new(heads: Vec<HeadParams>) -> Result<Self> {
        let Some(first) = heads.first() else {
            return Err(Error::InvalidArgument("multi-head layer needs at least one head".into()));
        };
        let dims = (first.d(), first.d_h());
        if let Some(bad) = heads.iter().find(|h| (h.d(), h.d_h()) != dims) {
            return Err(shape_err("MultiHeadParams", format!("{dims:?}"), format!("{:?}", (bad.d(), bad.d_h()))));
        }
        Ok(Self { heads })
    }

    pub fn heads(&self) -> &[HeadParams] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// Summed output `sum_h W_O^(h) head_h(X)`.
pub fn multi_head_forward(x: &TokenMatrix, mp: &MultiHeadParams) -> Result<TokenMatrix> {
    let mut total = Matrix::zeros(x.n(), x.d());
    for head in mp.heads() {
        let (y, _) = dot_head_forward(x, head)?;
        total = &total + y.matrix();
    }
    TokenMatrix::new(total)
}

/// New head list `heads'[i] = heads[sigma[i]]`.
pub fn permute_heads(mp: &MultiHeadParams, sigma: &[usize]) -> Result<MultiHeadParams> {
    let h = mp.len();
    if sigma.len() != h {
        return Err(Error::InvalidPermutation(format!("length {} for {h} heads", sigma.len())));
    }
    let mut seen = vec![false; h];
    for &s in sigma {
        if s >= h || seen[s] {
            return Err(Error::InvalidPermutation(format!("{sigma:?} is not a permutation of 0..{h}")));
        }
        seen[s] = true;
    }
    Ok(MultiHeadParams { heads: sigma.iter().map(|&s| mp.heads[s].clone()).collect() })
}

/// Result of a canonicalization.
#[derive(Debug, Clone)]
pub struct Canonical {
    pub params: HeadParams,
    /// The orbit representative is not unique here (repeated or vanishing
    /// singular values).
    pub degenerate: bool,
}

/// Balanced factorization of `G_VO`: from its rank-`d_h` SVD,
/// `W_O = U Σ^{1/2}` and `W_V = Σ^{1/2} V^T`.
pub fn canonicalize_vo(p: &HeadParams) -> Result<Canonical> {
    let (d, dh) = (p.d(), p.d_h());
    let svd = svd_deterministic(&composite_vo(p))?;
    let k = dh.min(svd.sigma.len());
    let root: Vec<f64> = svd.sigma[..k].iter().map(|s| s.sqrt()).collect();
    let w_o = Matrix::from_fn(d, dh, |i, c| if c < k { svd.u[(i, c)] * root[c] } else { 0.0 });
    let w_v = Matrix::from_fn(dh, d, |c, j| if c < k { root[c] * svd.v[(j, c)] } else { 0.0 });
    let head_spectrum = &svd.sigma[..(dh + 1).min(svd.sigma.len())];
    let degenerate = dh > svd.sigma.len() || !is_simple_spectrum(head_spectrum) || svd.sigma[k - 1] == 0.0;
    Ok(Canonical {
        params: HeadParams { w_q: p.w_q.clone(), w_k: p.w_k.clone(), w_v, w_o },
        degenerate,
    })
}

/// Left-SVD frame of `W_Q`: with `W_Q = U_Q Σ V_Q^T`, applies `S = U_Q^T`
/// so the canonical `W_Q = Σ V_Q^T`. Signs are fixed on the rows of
/// `V_Q^T`, which are the orbit-invariant part of the factorization.
/// Rank-deficient or repeated spectra return the input unchanged, flagged.
pub fn canonicalize_qk(p: &HeadParams) -> Result<Canonical> {
    let dh = p.d_h();
    // SVD of W_Q^T = V_Q Σ U_Q^T puts the sign convention on V_Q.
    let svd = svd_deterministic(&p.w_q.t())?;
    let full_rank = svd.sigma.len() == dh && svd.numerical_rank() == dh;
    if !full_rank || !svd.is_simple() {
        return Ok(Canonical { params: p.clone(), degenerate: true });
    }
    let s = svd.v.t();
    Ok(Canonical {
        params: HeadParams {
            w_q: s.matmul(&p.w_q),
            w_k: s.matmul(&p.w_k),
            w_v: p.w_v.clone(),
            w_o: p.w_o.clone(),
        },
        degenerate: false,
    })
}

/// Orthonormal basis of the orbit tangent space at a parameter point.
#[derive(Debug, Clone)]
pub struct TangentBasis {
    /// `P x K`, orthonormal columns.
    t: Matrix,
    /// Generator count before rank reduction, `d_h(d_h-1)/2 + d_h^2`.
    nominal: usize,
}

impl TangentBasis {
    pub fn matrix(&self) -> &Matrix {
        &self.t
    }

    /// Ambient dimension `P`.
    pub fn ambient_dim(&self) -> usize {
        self.t.rows()
    }

    /// Number of independent tangent directions `K`.
    pub fn rank(&self) -> usize {
        self.t.cols()
    }

    pub fn nominal(&self) -> usize {
        self.nominal
    }

    /// `T^T g`
    pub fn coefficients(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.t.rows(), "tangent coefficient dimension mismatch");
        let mut c = vec![0.0; self.t.cols()];
        for (i, gi) in g.iter().enumerate() {
            for (k, ck) in c.iter_mut().enumerate() {
                *ck += self.t[(i, k)] * gi;
            }
        }
        c
    }
}

/// Unnormalized generators as columns: one per antisymmetric basis element
/// `A = E_ab - E_ba` (direction `(A W_Q, A W_K, 0, 0)`), then one per
/// `B = E_ab` (direction `(0, 0, -B W_V, W_O B)`).
pub fn tangent_generators(p: &HeadParams) -> Matrix {
    let (d, dh) = (p.d(), p.d_h());
    let block = d * dh;
    let total = 4 * block;
    let mut cols: Vec<Vec<f64>> = Vec::new();

    for a in 0..dh {
        for b in (a + 1)..dh {
            let mut v = vec![0.0; total];
            for (offset, w) in [(0, &p.w_q), (block, &p.w_k)] {
                for j in 0..d {
                    v[offset + a * d + j] = w[(b, j)];
                    v[offset + b * d + j] = -w[(a, j)];
                }
            }
            cols.push(v);
        }
    }
    for a in 0..dh {
        for b in 0..dh {
            let mut v = vec![0.0; total];
            for j in 0..d {
                v[2 * block + a * d + j] = -p.w_v[(b, j)];
            }
            for i in 0..d {
                v[3 * block + i * dh + b] = p.w_o[(i, a)];
            }
            cols.push(v);
        }
    }
    Matrix::from_columns(total, &cols)
}

pub fn tangent_basis(p: &HeadParams) -> TangentBasis {
    let gens = tangent_generators(p);
    let nominal = gens.cols();
    TangentBasis { t: orthonormalize(&gens, TANGENT_TOL), nominal }
}

/// Balancedness matrices conserved by gradient flow on any loss that
/// factors through the composites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Charges {
    /// `W_Q W_Q^T - W_K W_K^T`
    pub q_qk: Matrix,
    /// `W_V W_V^T - W_O^T W_O`
    pub q_vo: Matrix,
}

pub fn charges(p: &HeadParams) -> Charges {
    Charges {
        q_qk: &p.w_q.matmul_t(&p.w_q) - &p.w_k.matmul_t(&p.w_k),
        q_vo: &p.w_v.matmul_t(&p.w_v) - &p.w_o.t_matmul(&p.w_o),
    }
}
