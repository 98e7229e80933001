//! Mean-squared-error losses and their reverse-mode gradients.
//!
//! Every loss is `mean over the batch of |Y - T|_F^2 / (n d)`.

use super::{Batch, GradientVector};
use crate::attention::{
    dot_head_forward, relational_forward, softmax_rows, AttentionWeights, HeadParams, ScalarScorer,
};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::relational::{gram, TokenMatrix};
use crate::symmetry::InvariantComposites;

fn check_dims(p: &HeadParams, batch: &Batch) -> Result<()> {
    if p.d() != batch.d() {
        return Err(shape_err("model_loss", format!("d = {}", p.d()), format!("d = {}", batch.d())));
    }
    Ok(())
}

fn sq_error(y: &Matrix, t: &Matrix) -> f64 {
    let (n, d) = y.shape();
    let dist = y.distance(t);
    dist * dist / (n * d) as f64
}

/// Backward pass of a row softmax: `dS_ij = A_ij (dA_ij - sum_k A_ik dA_ik)`.
fn softmax_backward(a: &Matrix, da: &Matrix) -> Matrix {
    let mut ds = Matrix::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        let ar = a.row(i);
        let dr = da.row(i);
        let inner: f64 = ar.iter().zip(dr).map(|(x, y)| x * y).sum();
        for (o, (x, y)) in ds.row_mut(i).iter_mut().zip(ar.iter().zip(dr)) {
            *o = x * (y - inner);
        }
    }
    ds
}

/// Loss of the dot-product head.
pub fn model_loss(p: &HeadParams, batch: &Batch) -> Result<f64> {
    check_dims(p, batch)?;
    let mut total = 0.0;
    for (x, t) in batch.pairs() {
        let (y, _) = dot_head_forward(x, p)?;
        total += sq_error(y.matrix(), t.matrix());
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of [`model_loss`] with the block shapes of [`HeadParams`].
pub fn head_gradient(p: &HeadParams, batch: &Batch) -> Result<HeadParams> {
    check_dims(p, batch)?;
    let (d, dh) = (p.d(), p.d_h());
    let scale = 1.0 / (dh as f64).sqrt();
    let mut g = HeadParams::zeros(d, dh);
    let weight = 1.0 / batch.len() as f64;

    for (x, t) in batch.pairs() {
        let x = x.matrix();
        let n = x.rows();
        let q = x.matmul_t(&p.w_q);
        let k = x.matmul_t(&p.w_k);
        let v = x.matmul_t(&p.w_v);
        let a = softmax_rows(&q.matmul_t(&k).scale(scale));
        let h = a.matmul(&v);
        let y = h.matmul_t(&p.w_o);

        let dy = (&y - t.matrix()).scale(2.0 * weight / (n * d) as f64);
        g.w_o = &g.w_o + &dy.t_matmul(&h);
        let dh_ = dy.matmul(&p.w_o);
        let da = dh_.matmul_t(&v);
        let dv = a.t_matmul(&dh_);
        let ds = softmax_backward(&a, &da).scale(scale);
        let dq = ds.matmul(&k);
        let dk = ds.t_matmul(&q);
        g.w_q = &g.w_q + &dq.t_matmul(x);
        g.w_k = &g.w_k + &dk.t_matmul(x);
        g.w_v = &g.w_v + &dv.t_matmul(x);
    }
    Ok(g)
}

/// Analytic gradient of [`model_loss`] in the order of [`HeadParams::to_vec`].
pub fn grad_analytic(p: &HeadParams, batch: &Batch) -> Result<GradientVector> {
    GradientVector::new(head_gradient(p, batch)?.to_vec())
}

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
pub fn central_difference(theta: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + eps;
            let up = f(&x);
            x[i] = theta[i] - eps;
            let down = f(&x);
            x[i] = theta[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Central-difference gradient of [`model_loss`].
pub fn grad_fd(p: &HeadParams, batch: &Batch, eps: f64) -> Result<GradientVector> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    check_dims(p, batch)?;
    let (d, dh) = (p.d(), p.d_h());
    let mut failure = None;
    let g = central_difference(&p.to_vec(), eps, |v| {
        match HeadParams::from_vec(d, dh, v).and_then(|q| model_loss(&q, batch)) {
            Ok(l) => l,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => GradientVector::new(g),
    }
}

/// Loss of Gram-relational attention `Y = A X` with scorer `f`.
pub fn relational_loss(f: &ScalarScorer, tau: f64, batch: &Batch) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in batch.pairs() {
        let (y, _) = relational_forward(x, f, tau)?;
        total += sq_error(y.matrix(), t.matrix());
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of [`relational_loss`] in the order of [`ScalarScorer::to_vec`].
pub fn relational_grad_analytic(f: &ScalarScorer, tau: f64, batch: &Batch) -> Result<GradientVector> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let hw = f.hidden_width();
    let mut dw1 = Matrix::zeros(hw, 3);
    let mut db1 = vec![0.0; hw];
    let mut dw2 = vec![0.0; hw];
    let mut db2 = 0.0;
    let weight = 1.0 / batch.len() as f64;

    for (x, t) in batch.pairs() {
        let g = gram(x);
        let gm = g.matrix();
        let xm = x.matrix();
        let (n, d) = xm.shape();
        let mut hidden = Vec::with_capacity(n * n);
        let mut scores = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let triple = (gm[(i, j)], gm[(i, i)], gm[(j, j)]);
                let h = f.hidden(triple);
                let s: f64 = h.iter().zip(&f.layer2_weights).map(|(a, b)| a * b).sum::<f64>() + f.layer2_bias;
                scores[(i, j)] = s / tau;
                hidden.push((triple, h));
            }
        }
        let a = softmax_rows(&scores);
        let y = a.matmul(xm);
        let dy = (&y - t.matrix()).scale(2.0 * weight / (n * d) as f64);
        let da = dy.matmul_t(xm);
        let ds = softmax_backward(&a, &da);
        for i in 0..n {
            for j in 0..n {
                let df = ds[(i, j)] / tau;
                if df == 0.0 {
                    continue;
                }
                let ((gij, gii, gjj), h) = &hidden[i * n + j];
                db2 += df;
                for k in 0..hw {
                    dw2[k] += df * h[k];
                    let dz = df * f.layer2_weights[k] * (1.0 - h[k] * h[k]);
                    db1[k] += dz;
                    dw1[(k, 0)] += dz * gij;
                    dw1[(k, 1)] += dz * gii;
                    dw1[(k, 2)] += dz * gjj;
                }
            }
        }
    }
    let mut v = dw1.into_vec();
    v.extend(db1);
    v.extend(dw2);
    v.push(db2);
    GradientVector::new(v)
}

/// Central-difference gradient of [`relational_loss`].
pub fn relational_grad_fd(f: &ScalarScorer, tau: f64, batch: &Batch, eps: f64) -> Result<GradientVector> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    let hw = f.hidden_width();
    let mut failure = None;
    let g = central_difference(&f.to_vec(), eps, |v| {
        match ScalarScorer::from_vec(hw, v).and_then(|s| relational_loss(&s, tau, batch)) {
            Ok(l) => l,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => GradientVector::new(g),
    }
}

/// Head written in invariant coordinates: scores `x_i^T G_QK x_j / sqrt(d_h)`,
/// output `Y = A X G_VO^T`. Equal to the factored head whenever the
/// composites come from one.
fn invariant_parts(c: &InvariantComposites, x: &Matrix) -> (Matrix, Matrix, Matrix) {
    let scale = 1.0 / (c.d_h as f64).sqrt();
    let s = x.matmul(&c.g_qk).matmul_t(x).scale(scale);
    let a = softmax_rows(&s);
    let m = a.matmul(x);
    let y = m.matmul_t(&c.g_vo);
    (a, m, y)
}

/// Forward pass of the composite-parameterized head.
pub fn invariant_forward(c: &InvariantComposites, x: &TokenMatrix) -> Result<(TokenMatrix, AttentionWeights)> {
    let d = x.d();
    if c.g_qk.shape() != (d, d) || c.g_vo.shape() != (d, d) {
        return Err(shape_err("invariant_forward", format!("{d}x{d} composites"), format!("{:?}", c.g_qk.shape())));
    }
    let (a, _, y) = invariant_parts(c, x.matrix());
    Ok((TokenMatrix::new(y)?, AttentionWeights::new(a)?))
}

pub fn invariant_loss(c: &InvariantComposites, batch: &Batch) -> Result<f64> {
    if c.g_qk.shape() != (batch.d(), batch.d()) || c.g_vo.shape() != (batch.d(), batch.d()) {
        return Err(shape_err("invariant_loss", format!("{0}x{0} composites", batch.d()), format!("{:?}", c.g_qk.shape())));
    }
    let mut total = 0.0;
    for (x, t) in batch.pairs() {
        let (_, _, y) = invariant_parts(c, x.matrix());
        total += sq_error(&y, t.matrix());
    }
    Ok(total / batch.len() as f64)
}

/// `(dL/dG_QK, dL/dG_VO)` for [`invariant_loss`].
pub fn invariant_gradient(c: &InvariantComposites, batch: &Batch) -> Result<(Matrix, Matrix)> {
    invariant_loss(c, batch)?;
    let d = batch.d();
    let scale = 1.0 / (c.d_h as f64).sqrt();
    let weight = 1.0 / batch.len() as f64;
    let mut g_qk = Matrix::zeros(d, d);
    let mut g_vo = Matrix::zeros(d, d);
    for (x, t) in batch.pairs() {
        let x = x.matrix();
        let n = x.rows();
        let (a, m, y) = invariant_parts(c, x);
        let dy = (&y - t.matrix()).scale(2.0 * weight / (n * d) as f64);
        g_vo = &g_vo + &dy.t_matmul(&m);
        let dm = dy.matmul(&c.g_vo);
        let da = dm.matmul_t(x);
        let ds = softmax_backward(&a, &da).scale(scale);
        g_qk = &g_qk + &x.t_matmul(&ds).matmul(x);
    }
    Ok((g_qk, g_vo))
}
