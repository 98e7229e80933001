//! Update rules for the four optimization schemes.

use super::grad::{head_gradient, invariant_gradient};
use super::{Batch, GradientVector, OptimizerConfig, RankMode, Scheme};
use crate::attention::HeadParams;
use crate::error::{shape_err, Error, Result};
use crate::linalg::{project_rank, svd_deterministic, Matrix, SIMPLE_SPECTRUM_GAP};
use crate::symmetry::{canonicalize_qk, canonicalize_vo, charges, InvariantComposites, TangentBasis};

/// `g - T (T^T g)`, the component of `g` transverse to the orbit.
pub fn project_gradient(g: &GradientVector, t: &TangentBasis) -> Result<GradientVector> {
    if g.len() != t.ambient_dim() {
        return Err(shape_err("project_gradient", t.ambient_dim(), g.len()));
    }
    let c = t.coefficients(g.as_slice());
    let basis = t.matrix();
    let mut out = g.as_slice().to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        let row = basis.row(i);
        *o -= row.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(GradientVector::from_vec_unchecked(out))
}

/// `theta - eta * g` in vectorized coordinates.
pub fn apply_projected_update(p: &HeadParams, g: &GradientVector, eta: f64) -> Result<HeadParams> {
    if g.len() != p.param_count() {
        return Err(shape_err("apply_projected_update", p.param_count(), g.len()));
    }
    let theta: Vec<f64> = p.to_vec().iter().zip(g.as_slice()).map(|(t, gi)| t - eta * gi).collect();
    HeadParams::from_vec(p.d(), p.d_h(), &theta)
}

fn expect_scheme(cfg: &OptimizerConfig, want: Scheme) -> Result<()> {
    if cfg.scheme != want {
        return Err(Error::InvalidConfig(format!(
            "{} step called with scheme {}",
            want.name(),
            cfg.scheme.name()
        )));
    }
    Ok(())
}

fn gd_step(p: &HeadParams, batch: &Batch, eta: f64) -> Result<HeadParams> {
    let g = head_gradient(p, batch)?;
    Ok(HeadParams {
        w_q: p.w_q.axpy(-eta, &g.w_q),
        w_k: p.w_k.axpy(-eta, &g.w_k),
        w_v: p.w_v.axpy(-eta, &g.w_v),
        w_o: p.w_o.axpy(-eta, &g.w_o),
    })
}

/// Plain gradient step, ignoring the scheme field.
pub fn step_baseline(p: &HeadParams, batch: &Batch, cfg: &OptimizerConfig) -> Result<HeadParams> {
    gd_step(p, batch, cfg.learning_rate)
}

/// `theta - eta P_perp(theta) grad L(theta)`.
pub fn step_projected(p: &HeadParams, batch: &Batch, cfg: &OptimizerConfig) -> Result<HeadParams> {
    expect_scheme(cfg, Scheme::ProjectedSgd)?;
    let g = GradientVector::new(head_gradient(p, batch)?.to_vec())?;
    let t = crate::symmetry::tangent_basis(p);
    let g_perp = project_gradient(&g, &t)?;
    apply_projected_update(p, &g_perp, cfg.learning_rate)
}

/// `G_VO = A B` with `A` of shape `d x d_h` and `B` of shape `d_h x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedComposite {
    pub a: Matrix,
    pub b: Matrix,
}

impl FactorizedComposite {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(shape_err("FactorizedComposite", format!("inner dimension {}", a.cols()), b.rows()));
        }
        Ok(Self { a, b })
    }

    /// Balanced factors from the leading `d_h` singular triplets of `g`:
    /// `A = U Σ^{1/2}`, `B = Σ^{1/2} V^T`.
    pub fn balanced(g: &Matrix, d_h: usize) -> Result<Self> {
        let svd = svd_deterministic(g)?;
        let k = d_h.min(svd.sigma.len());
        let a = Matrix::from_fn(g.rows(), d_h, |i, c| if c < k { svd.u[(i, c)] * svd.sigma[c].sqrt() } else { 0.0 });
        let b = Matrix::from_fn(d_h, g.cols(), |c, j| if c < k { svd.sigma[c].sqrt() * svd.v[(j, c)] } else { 0.0 });
        Ok(Self { a, b })
    }

    pub fn d_h(&self) -> usize {
        self.a.cols()
    }

    pub fn product(&self) -> Matrix {
        self.a.matmul(&self.b)
    }

    /// One gradient step on the factors given `dL/dG`.
    pub fn step(&self, grad_g: &Matrix, eta: f64) -> FactorizedComposite {
        FactorizedComposite {
            a: self.a.axpy(-eta, &grad_g.matmul_t(&self.b)),
            b: self.b.axpy(-eta, &self.a.t_matmul(grad_g)),
        }
    }
}

/// Result of one invariant-coordinate update.
#[derive(Debug, Clone)]
pub struct InvariantStep {
    pub g: Matrix,
    /// `sigma_{d_h}` and `sigma_{d_h+1}` tied, so the rank reduction was not unique.
    pub tie: bool,
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {eta}")));
    }
    Ok(())
}

fn check_square_pair(op: &'static str, g: &Matrix, grad: &Matrix) -> Result<()> {
    if !g.is_square() || g.shape() != grad.shape() {
        return Err(shape_err(op, format!("{:?} square", g.shape()), format!("{:?}", grad.shape())));
    }
    Ok(())
}

fn tie_at(m: &Matrix, k: usize) -> Result<bool> {
    let s = svd_deterministic(m)?.sigma;
    Ok(k > 0 && k < s.len() && s[k - 1] > 0.0 && s[k - 1] - s[k] <= SIMPLE_SPECTRUM_GAP * s[0])
}

/// Gradient step on `G_VO` kept at rank `<= d_h`, by truncated SVD after the
/// ambient step or by stepping a balanced factorization.
pub fn step_invariant_vo(g_vo: &Matrix, grad_g: &Matrix, eta: f64, d_h: usize, mode: RankMode) -> Result<InvariantStep> {
    check_eta(eta)?;
    check_square_pair("step_invariant_vo", g_vo, grad_g)?;
    match mode {
        RankMode::Project => {
            let r = project_rank(&g_vo.axpy(-eta, grad_g), d_h)?;
            Ok(InvariantStep { g: r.matrix, tie: r.tie })
        }
        RankMode::Factorized => {
            let tie = tie_at(g_vo, d_h)?;
            let f = FactorizedComposite::balanced(g_vo, d_h)?;
            Ok(InvariantStep { g: f.step(grad_g, eta).product(), tie })
        }
    }
}

/// Gradient step on `G_QK`; projected to rank `d_h` only when `d_h < d`.
pub fn step_invariant_qk(g_qk: &Matrix, grad_g: &Matrix, eta: f64, d_h: usize, d: usize) -> Result<InvariantStep> {
    check_eta(eta)?;
    check_square_pair("step_invariant_qk", g_qk, grad_g)?;
    if g_qk.rows() != d {
        return Err(shape_err("step_invariant_qk", d, g_qk.rows()));
    }
    let ambient = g_qk.axpy(-eta, grad_g);
    if d_h >= d {
        return Ok(InvariantStep { g: ambient, tie: false });
    }
    let r = project_rank(&ambient, d_h)?;
    Ok(InvariantStep { g: r.matrix, tie: r.tie })
}

/// One invariant-descent step on both composites. The flag reports a tie in
/// either rank reduction.
pub fn step_invariant(c: &InvariantComposites, batch: &Batch, cfg: &OptimizerConfig) -> Result<(InvariantComposites, bool)> {
    expect_scheme(cfg, Scheme::InvariantDescent)?;
    let (grad_qk, grad_vo) = invariant_gradient(c, batch)?;
    let d = batch.d();
    let qk = step_invariant_qk(&c.g_qk, &grad_qk, cfg.learning_rate, c.d_h, d)?;
    let vo = step_invariant_vo(&c.g_vo, &grad_vo, cfg.learning_rate, c.d_h, cfg.rank_mode)?;
    Ok((InvariantComposites { g_qk: qk.g, g_vo: vo.g, d_h: c.d_h }, qk.tie || vo.tie))
}

/// Plain step; after every `redress_period`-th step the parameters are moved
/// to the canonical point of their orbit (QK first, then VO).
pub fn step_dressed(p: &HeadParams, batch: &Batch, cfg: &OptimizerConfig, step_index: usize) -> Result<HeadParams> {
    expect_scheme(cfg, Scheme::DressedSgd)?;
    if cfg.redress_period == 0 {
        return Err(Error::InvalidConfig("redress_period must be >= 1".into()));
    }
    let next = gd_step(p, batch, cfg.learning_rate)?;
    if !(step_index + 1).is_multiple_of(cfg.redress_period) {
        return Ok(next);
    }
    let qk = canonicalize_qk(&next)?.params;
    Ok(canonicalize_vo(&qk)?.params)
}

/// Maximum Frobenius drift of `(Q_QK, Q_VO)` along `steps` plain gradient
/// steps of size `eta`.
pub fn charge_drift(p0: &HeadParams, batch: &Batch, eta: f64, steps: usize) -> Result<(f64, f64)> {
    let c0 = charges(p0);
    let mut p = p0.clone();
    let (mut qk, mut vo) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        p = gd_step(&p, batch, eta)?;
        if !p.is_finite() {
            return Err(Error::NonFinite { context: "charge_drift" });
        }
        let c = charges(&p);
        qk = qk.max(c.q_qk.distance(&c0.q_qk));
        vo = vo.max(c.q_vo.distance(&c0.q_vo));
    }
    Ok((qk, vo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::dot_head_forward;
    use crate::linalg::random::{gaussian, gaussian_matrix, rng};
    use crate::linalg::{random_invertible, random_orthogonal};
    use crate::optim::{grad_analytic, model_loss};
    use crate::relational::TokenMatrix;
    use crate::symmetry::{act_qk, act_vo, composite_qk, composite_vo, rank_tail, tangent_basis};

    fn problem(seed: u64, n: usize, d: usize, dh: usize, samples: usize) -> (HeadParams, Batch) {
        let mut r = rng(seed);
        let s = 1.0 / (d as f64).sqrt();
        let teacher = HeadParams::random(d, dh, s, &mut r);
        let student = HeadParams::random(d, dh, s, &mut r);
        let inputs: Vec<TokenMatrix> = (0..samples)
            .map(|_| TokenMatrix::new(gaussian_matrix(n, d, 1.0, &mut r)).unwrap())
            .collect();
        let targets = inputs.iter().map(|x| dot_head_forward(x, &teacher).unwrap().0).collect();
        (student, Batch::new(inputs, targets).unwrap())
    }

    fn cfg(scheme: Scheme, eta: f64) -> OptimizerConfig {
        OptimizerConfig { learning_rate: eta, ..OptimizerConfig::with_scheme(scheme) }
    }

    #[test]
    fn projector_contracts() {
        let (p, _) = problem(1, 5, 6, 3, 1);
        let t = tangent_basis(&p);
        let mut r = rng(2);
        let g = GradientVector::new((0..p.param_count()).map(|_| gaussian(&mut r)).collect()).unwrap();
        let gp = project_gradient(&g, &t).unwrap();
        let gpp = project_gradient(&gp, &t).unwrap();
        let diff: Vec<f64> = gp.as_slice().iter().zip(gpp.as_slice()).map(|(a, b)| a - b).collect();
        assert!(crate::linalg::norm(&diff) <= 1e-10);
        for c in t.coefficients(gp.as_slice()) {
            assert!(c.abs() <= 1e-10 * g.norm());
        }
        let tg = crate::linalg::norm(&t.coefficients(g.as_slice()));
        assert!((g.norm().powi(2) - gp.norm().powi(2) - tg * tg).abs() <= 1e-9);

        let tangent = GradientVector::new(t.matrix().col(0)).unwrap();
        assert!(project_gradient(&tangent, &t).unwrap().norm() <= 1e-10);
        assert!(project_gradient(&gp, &t).unwrap().as_slice().iter().zip(gp.as_slice()).all(|(a, b)| (a - b).abs() <= 1e-12));

        let short = GradientVector::new(vec![0.0; 3]).unwrap();
        assert!(project_gradient(&short, &t).is_err());
    }

    #[test]
    fn tangent_update_is_annihilated() {
        let (p, _) = problem(3, 5, 6, 2, 1);
        let t = tangent_basis(&p);
        let g = GradientVector::new(t.matrix().col(1)).unwrap();
        let moved = apply_projected_update(&p, &project_gradient(&g, &t).unwrap(), 0.1).unwrap();
        assert!(moved.max_abs_diff(&p) <= 1e-10);
    }

    #[test]
    fn projected_step_with_zero_rate_is_identity() {
        let (p, batch) = problem(4, 5, 6, 2, 2);
        let out = step_projected(&p, &batch, &cfg(Scheme::ProjectedSgd, 0.0)).unwrap();
        assert_eq!(out, p);
        assert!(step_projected(&p, &batch, &cfg(Scheme::BaselineSgd, 0.1)).is_err());
    }

    #[test]
    fn projected_descent_does_not_increase_loss() {
        let (mut p, batch) = problem(5, 8, 16, 4, 4);
        let c = cfg(Scheme::ProjectedSgd, 1e-2);
        let mut loss = model_loss(&p, &batch).unwrap();
        for _ in 0..100 {
            p = step_projected(&p, &batch, &c).unwrap();
            let next = model_loss(&p, &batch).unwrap();
            assert!(next <= loss + 1e-15, "{next} > {loss}");
            loss = next;
        }
    }

    #[test]
    fn loss_gradient_is_already_transverse() {
        let (p, batch) = problem(6, 5, 6, 3, 2);
        let g = grad_analytic(&p, &batch).unwrap();
        let t = tangent_basis(&p);
        let tangential = crate::linalg::norm(&t.coefficients(g.as_slice()));
        assert!(tangential <= 1e-10 * g.norm().max(1e-300));
    }

    #[test]
    fn invariant_vo_examples() {
        let m = Matrix::diag(&[3.0, 2.0, 1.0]);
        let zero = Matrix::zeros(3, 3);
        let out = step_invariant_vo(&m, &zero, 0.1, 2, RankMode::Project).unwrap();
        assert!(out.g.max_abs_diff(&Matrix::diag(&[3.0, 2.0, 0.0])) <= 1e-12);
        assert!(!out.tie);

        let (p, _) = problem(7, 4, 5, 2, 1);
        let g = composite_vo(&p);
        for mode in [RankMode::Project, RankMode::Factorized] {
            let same = step_invariant_vo(&g, &Matrix::zeros(5, 5), 0.1, 2, mode).unwrap();
            assert!(same.g.max_abs_diff(&g) <= 1e-10);
        }
        assert!(step_invariant_vo(&g, &g, 0.0, 2, RankMode::Project).is_err());
        assert!(step_invariant_vo(&g, &Matrix::zeros(4, 4), 0.1, 2, RankMode::Project).is_err());
    }

    #[test]
    fn projection_beats_random_low_rank_competitors() {
        let mut r = rng(8);
        let g = gaussian_matrix(6, 6, 1.0, &mut r);
        let grad = gaussian_matrix(6, 6, 1.0, &mut r);
        let ambient = g.axpy(-0.1, &grad);
        let out = step_invariant_vo(&g, &grad, 0.1, 2, RankMode::Project).unwrap().g;
        let best = out.distance(&ambient);
        for _ in 0..50 {
            let c = gaussian_matrix(6, 2, 1.0, &mut r).matmul(&gaussian_matrix(2, 6, 1.0, &mut r));
            assert!(best <= c.distance(&ambient));
        }
        assert!(rank_tail(&out, 2).unwrap() <= 1e-9);
    }

    #[test]
    fn factorized_step_follows_chain_rule() {
        let mut r = rng(9);
        let a = gaussian_matrix(5, 2, 1.0, &mut r);
        let b = gaussian_matrix(2, 5, 1.0, &mut r);
        let f = FactorizedComposite::new(a.clone(), b.clone()).unwrap();
        let grad = gaussian_matrix(5, 5, 1.0, &mut r);
        let s = f.step(&grad, 0.05);
        assert!(s.a.max_abs_diff(&(&a - &grad.matmul(&b.t()).scale(0.05))) <= 1e-14);
        assert!(s.b.max_abs_diff(&(&b - &a.t().matmul(&grad).scale(0.05))) <= 1e-14);
        assert!(rank_tail(&s.product(), 2).unwrap() <= 1e-9);

        let balanced = FactorizedComposite::balanced(&f.product(), 2).unwrap();
        assert!(balanced.product().max_abs_diff(&f.product()) <= 1e-10);
        let qa = balanced.a.t_matmul(&balanced.a);
        let qb = balanced.b.matmul_t(&balanced.b);
        assert!(qa.max_abs_diff(&qb) <= 1e-10);
        assert!(FactorizedComposite::new(a, Matrix::zeros(3, 5)).is_err());
    }

    #[test]
    fn invariant_qk_examples() {
        let mut r = rng(10);
        let g = gaussian_matrix(4, 4, 1.0, &mut r);
        let grad = gaussian_matrix(4, 4, 1.0, &mut r);
        let plain = step_invariant_qk(&g, &grad, 0.1, 4, 4).unwrap();
        assert!(plain.g.max_abs_diff(&g.axpy(-0.1, &grad)) <= 1e-15);
        let low = step_invariant_qk(&g, &grad, 0.1, 2, 4).unwrap();
        let s = svd_deterministic(&low.g).unwrap().sigma;
        assert!(s[2] <= 1e-9 * s[0]);
        let (p, _) = problem(11, 4, 4, 2, 1);
        let gq = composite_qk(&p);
        assert!(step_invariant_qk(&gq, &Matrix::zeros(4, 4), 0.1, 2, 4).unwrap().g.max_abs_diff(&gq) <= 1e-10);
    }

    #[test]
    fn invariant_descent_is_orbit_independent() {
        let (p, batch) = problem(12, 6, 8, 2, 2);
        let q = act_vo(&act_qk(&p, &random_orthogonal(2, 1)).unwrap(), &random_invertible(2, 2, 10.0)).unwrap();
        for mode in [RankMode::Project, RankMode::Factorized] {
            let c = OptimizerConfig { rank_mode: mode, ..cfg(Scheme::InvariantDescent, 1e-2) };
            let mut a = InvariantComposites::of(&p);
            let mut b = InvariantComposites::of(&q);
            for _ in 0..20 {
                a = step_invariant(&a, &batch, &c).unwrap().0;
                b = step_invariant(&b, &batch, &c).unwrap().0;
                assert!(a.g_vo.max_abs_diff(&b.g_vo) <= 1e-8);
                assert!(a.g_qk.max_abs_diff(&b.g_qk) <= 1e-8);
            }
        }
    }

    #[test]
    fn dressed_step_redresses_on_schedule() {
        let (p, batch) = problem(13, 5, 6, 2, 2);
        let c = OptimizerConfig { redress_period: 1, ..cfg(Scheme::DressedSgd, 1e-2) };
        let next = step_dressed(&p, &batch, &c, 0).unwrap();
        let plain = step_baseline(&p, &batch, &c).unwrap();
        assert!(composite_qk(&next).max_abs_diff(&composite_qk(&plain)) <= 1e-9);
        assert!(composite_vo(&next).max_abs_diff(&composite_vo(&plain)) <= 1e-9);
        assert!((model_loss(&next, &batch).unwrap() - model_loss(&plain, &batch).unwrap()).abs() <= 1e-9);

        // Zero gradient: the step lands exactly on the canonical form.
        let targets = batch.inputs().iter().map(|x| dot_head_forward(x, &p).unwrap().0).collect();
        let exact = Batch::new(batch.inputs().to_vec(), targets).unwrap();
        let landed = step_dressed(&p, &exact, &c, 0).unwrap();
        let canon = canonicalize_vo(&canonicalize_qk(&p).unwrap().params).unwrap().params;
        assert!(landed.max_abs_diff(&canon) <= 1e-12);

        let c3 = OptimizerConfig { redress_period: 3, ..c };
        assert_eq!(step_dressed(&p, &batch, &c3, 0).unwrap(), plain);
    }

    #[test]
    fn charge_drift_is_first_order() {
        let (p, batch) = problem(14, 8, 16, 4, 4);
        assert_eq!(charge_drift(&p, &batch, 1e-2, 0).unwrap(), (0.0, 0.0));
        let drifts: Vec<(f64, f64)> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&eta| charge_drift(&p, &batch, eta, (0.5 / eta).round() as usize).unwrap())
            .collect();
        let slope = |a: f64, b: f64| (a / b).ln() / 2f64.ln();
        for (hi, lo) in [(0, 1), (1, 2)] {
            let s_qk = slope(drifts[hi].0, drifts[lo].0);
            let s_vo = slope(drifts[hi].1, drifts[lo].1);
            assert!((0.8..=1.2).contains(&s_qk), "qk slope {s_qk}");
            assert!((0.8..=1.2).contains(&s_vo), "vo slope {s_vo}");
        }

        let targets = batch.inputs().iter().map(|x| dot_head_forward(x, &p).unwrap().0).collect();
        let exact = Batch::new(batch.inputs().to_vec(), targets).unwrap();
        let (a, b) = charge_drift(&p, &exact, 1e-2, 10).unwrap();
        assert!(a <= 1e-20 && b <= 1e-20);
    }
}
