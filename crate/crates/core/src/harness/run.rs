use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TaskKind};
use crate::attention::{dot_head_forward, relational_forward, HeadParams, ScalarScorer};
use crate::error::{Error, Result};
use crate::linalg::random::{gaussian_matrix, rng_stream};
use crate::linalg::{effective_rank, random_orthogonal, Matrix};
use crate::optim::{
    grad_analytic, invariant_forward, invariant_loss, model_loss, relational_grad_analytic, relational_loss,
    step_baseline, step_dressed, step_invariant, step_projected, Batch, Scheme,
};
use crate::relational::TokenMatrix;
use crate::symmetry::{charges, tangent_basis, Charges, InvariantComposites};

/// Model that produced the targets of a task.
#[derive(Debug, Clone, PartialEq)]
pub enum Teacher {
    Dot(HeadParams),
    Relational(ScalarScorer),
}

#[derive(Debug, Clone)]
pub struct Task {
    pub batch: Batch,
    pub teacher: Teacher,
}

/// Seeded teacher-student task. The teacher and the inputs come from stream
/// 0 of `seed`; entries are `N(0, 1) / sqrt(d)`.
pub fn generate_task(cfg: &ExperimentConfig, seed: u64) -> Result<Task> {
    let mut r = rng_stream(seed, 0);
    let scale = 1.0 / (cfg.d as f64).sqrt();
    let teacher = match cfg.task {
        TaskKind::TeacherStudentDot => Teacher::Dot(HeadParams::random(cfg.d, cfg.d_h, scale, &mut r)),
        TaskKind::TeacherStudentRelational => Teacher::Relational(ScalarScorer::random(cfg.scorer_width, &mut r)),
    };
    let inputs = (0..cfg.batch_size)
        .map(|_| TokenMatrix::new(gaussian_matrix(cfg.n, cfg.d, scale, &mut r)))
        .collect::<Result<Vec<_>>>()?;
    let targets = inputs
        .iter()
        .map(|x| match &teacher {
            Teacher::Dot(p) => dot_head_forward(x, p).map(|o| o.0),
            Teacher::Relational(f) => relational_forward(x, f, cfg.tau()).map(|o| o.0),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Task { batch: Batch::new(inputs, targets)?, teacher })
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub seed: u64,
    pub loss: f64,
    pub eff_rank_gqk: f64,
    pub eff_rank_gvo: f64,
    pub charge_drift_qk: f64,
    pub charge_drift_vo: f64,
    pub orbit_component_norm: f64,
    pub wall_time_s: f64,
}

impl MetricsRecord {
    fn is_finite(&self) -> bool {
        [
            self.loss,
            self.eff_rank_gqk,
            self.eff_rank_gvo,
            self.charge_drift_qk,
            self.charge_drift_vo,
            self.orbit_component_norm,
            self.wall_time_s,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// A seed that stopped early. Its records up to `step` are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub step: usize,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    /// Attention weights of the last valid model on the first input.
    pub final_attention: Option<Matrix>,
    pub failure: Option<SeedFailure>,
}

impl SeedOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        match self.failure {
            Some(_) => None,
            None => self.records.last().map(|r| r.loss),
        }
    }
}

/// Zero for the zero matrix, where the entropy is undefined.
fn eff_rank(m: &Matrix) -> Result<f64> {
    match effective_rank(m) {
        Err(Error::ZeroMatrix) => Ok(0.0),
        other => other,
    }
}

enum State {
    Factored(HeadParams),
    Invariant(InvariantComposites),
    Scorer(ScalarScorer),
}

struct Snapshot {
    loss: f64,
    eff_rank_gqk: f64,
    eff_rank_gvo: f64,
    drift: (f64, f64),
    orbit: f64,
}

struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    batch: &'a Batch,
    q0: Option<Charges>,
}

impl Trainer<'_> {
    fn snapshot(&self, state: &State) -> Result<Snapshot> {
        match state {
            State::Factored(p) => {
                let c = InvariantComposites::of(p);
                let q = charges(p);
                let q0 = self.q0.as_ref().expect("factored runs record initial charges");
                let g = grad_analytic(p, self.batch)?;
                let t = tangent_basis(p);
                Ok(Snapshot {
                    loss: model_loss(p, self.batch)?,
                    eff_rank_gqk: eff_rank(&c.g_qk)?,
                    eff_rank_gvo: eff_rank(&c.g_vo)?,
                    drift: (q.q_qk.distance(&q0.q_qk), q.q_vo.distance(&q0.q_vo)),
                    orbit: crate::linalg::norm(&t.coefficients(g.as_slice())),
                })
            }
            State::Invariant(c) => Ok(Snapshot {
                loss: invariant_loss(c, self.batch)?,
                eff_rank_gqk: eff_rank(&c.g_qk)?,
                eff_rank_gvo: eff_rank(&c.g_vo)?,
                drift: (0.0, 0.0),
                orbit: 0.0,
            }),
            State::Scorer(f) => {
                let (y, a) = relational_forward(&self.batch.inputs()[0], f, self.cfg.tau())?;
                Ok(Snapshot {
                    loss: relational_loss(f, self.cfg.tau(), self.batch)?,
                    eff_rank_gqk: eff_rank(a.matrix())?,
                    eff_rank_gvo: eff_rank(y.matrix())?,
                    drift: (0.0, 0.0),
                    orbit: 0.0,
                })
            }
        }
    }

    fn advance(&self, state: &State, step: usize) -> Result<State> {
        let opt = &self.cfg.optimizer;
        let next = match state {
            State::Factored(p) => State::Factored(match opt.scheme {
                Scheme::BaselineSgd => step_baseline(p, self.batch, opt)?,
                Scheme::ProjectedSgd => step_projected(p, self.batch, opt)?,
                Scheme::DressedSgd => step_dressed(p, self.batch, opt, step)?,
                Scheme::InvariantDescent => unreachable!("invariant descent runs on composites"),
            }),
            State::Invariant(c) => State::Invariant(step_invariant(c, self.batch, opt)?.0),
            State::Scorer(f) => {
                let g = relational_grad_analytic(f, self.cfg.tau(), self.batch)?;
                let theta: Vec<f64> =
                    f.to_vec().iter().zip(g.as_slice()).map(|(t, gi)| t - opt.learning_rate * gi).collect();
                State::Scorer(ScalarScorer::from_vec(f.hidden_width(), &theta)?)
            }
        };
        let finite = match &next {
            State::Factored(p) => p.is_finite(),
            State::Invariant(c) => c.g_qk.is_finite() && c.g_vo.is_finite(),
            State::Scorer(_) => true,
        };
        if !finite {
            return Err(Error::NonFinite { context: "parameters after update" });
        }
        Ok(next)
    }

    fn attention(&self, state: &State) -> Result<Matrix> {
        let x = &self.batch.inputs()[0];
        let a = match state {
            State::Factored(p) => dot_head_forward(x, p)?.1,
            State::Invariant(c) => invariant_forward(c, x)?.1,
            State::Scorer(f) => relational_forward(x, f, self.cfg.tau())?.1,
        };
        Ok(a.into_matrix())
    }
}

fn initial_state(cfg: &ExperimentConfig, seed: u64) -> State {
    let mut r = rng_stream(seed, 1);
    match cfg.task {
        TaskKind::TeacherStudentRelational => State::Scorer(ScalarScorer::random(cfg.scorer_width, &mut r)),
        TaskKind::TeacherStudentDot => {
            let p = HeadParams::random(cfg.d, cfg.d_h, 1.0 / (cfg.d as f64).sqrt(), &mut r);
            match cfg.optimizer.scheme {
                Scheme::InvariantDescent => State::Invariant(InvariantComposites::of(&p)),
                _ => State::Factored(p),
            }
        }
    }
}

fn train(cfg: &ExperimentConfig, seed: u64, batch: &Batch, state: State) -> SeedOutcome {
    let q0 = match &state {
        State::Factored(p) => Some(charges(p)),
        _ => None,
    };
    let trainer = Trainer { cfg, batch, q0 };
    let mut state = state;
    let mut records = Vec::with_capacity(cfg.optimizer.steps + 1);
    let mut failure = None;

    for step in 0..=cfg.optimizer.steps {
        let clock = cfg.timing.then(Instant::now);
        let result = trainer.snapshot(&state).and_then(|s| {
            let next = if step < cfg.optimizer.steps { Some(trainer.advance(&state, step)?) } else { None };
            Ok((s, next))
        });
        let (snap, next) = match result {
            Ok(v) => v,
            Err(e) => {
                failure = Some(SeedFailure { seed, step, error: e.to_string() });
                break;
            }
        };
        let record = MetricsRecord {
            step,
            seed,
            loss: snap.loss,
            eff_rank_gqk: snap.eff_rank_gqk,
            eff_rank_gvo: snap.eff_rank_gvo,
            charge_drift_qk: snap.drift.0,
            charge_drift_vo: snap.drift.1,
            orbit_component_norm: snap.orbit,
            wall_time_s: clock.map_or(0.0, |c| c.elapsed().as_secs_f64()),
        };
        if !record.is_finite() {
            failure = Some(SeedFailure { seed, step, error: Error::NonFinite { context: "metrics" }.to_string() });
            break;
        }
        records.push(record);
        if let Some(n) = next {
            state = n;
        }
    }
    let final_attention = trainer.attention(&state).ok();
    SeedOutcome { seed, records, final_attention, failure }
}

/// Full training run of one seed. Errors are captured in the outcome.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> SeedOutcome {
    match generate_task(cfg, seed) {
        Ok(task) => train(cfg, seed, &task.batch, initial_state(cfg, seed)),
        Err(e) => SeedOutcome {
            seed,
            records: Vec::new(),
            final_attention: None,
            failure: Some(SeedFailure { seed, step: 0, error: e.to_string() }),
        },
    }
}

/// Records of every seed, in config order, with the aggregates.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub outcomes: Vec<SeedOutcome>,
}

impl RunResult {
    pub fn records(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.outcomes.iter().flat_map(|o| &o.records)
    }

    pub fn failures(&self) -> Vec<&SeedFailure> {
        self.outcomes.iter().filter_map(|o| o.failure.as_ref()).collect()
    }

    /// `(seed, final loss)` of the seeds that completed.
    pub fn final_losses(&self) -> Vec<(u64, f64)> {
        self.outcomes.iter().filter_map(|o| o.final_loss().map(|l| (o.seed, l))).collect()
    }

    pub fn stats(&self) -> LossStats {
        LossStats::of(&self.final_losses().iter().map(|x| x.1).collect::<Vec<_>>())
    }
}

/// Mean and unbiased variance of a sample; the variance of a single value is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub var: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl LossStats {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { count: 0, mean: None, var: None, min: None, max: None };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() < 2 { 0.0 } else { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) };
        Self {
            count: xs.len(),
            mean: Some(mean),
            var: Some(var),
            min: xs.iter().copied().reduce(f64::min),
            max: xs.iter().copied().reduce(f64::max),
        }
    }
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::InvalidArgument("thread count must be >= 1".into()));
        }
        b = b.num_threads(t);
    }
    b.build().map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))
}

/// Runs `runner` on every configured seed in parallel; the result keeps the
/// config order whatever the scheduling.
pub fn run_with<F>(cfg: &ExperimentConfig, threads: Option<usize>, runner: F) -> Result<RunResult>
where
    F: Fn(&ExperimentConfig, u64) -> SeedOutcome + Sync,
{
    cfg.validate()?;
    let outcomes = pool(threads)?.install(|| cfg.seeds.par_iter().map(|&s| runner(cfg, s)).collect());
    Ok(RunResult { config: cfg.clone(), outcomes })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    run_with(cfg, None, run_seed)
}

pub fn run_experiment_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunResult> {
    run_with(cfg, threads, run_seed)
}

/// The same configuration trained under every scheme.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<(Scheme, RunResult)>,
}

impl Comparison {
    pub fn stats(&self) -> Vec<(Scheme, LossStats)> {
        self.runs.iter().map(|(s, r)| (*s, r.stats())).collect()
    }
}

pub fn compare_schemes(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Comparison> {
    if cfg.task != TaskKind::TeacherStudentDot {
        return Err(Error::InvalidConfig("scheme comparison needs the dot-product task".into()));
    }
    let runs = Scheme::ALL
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.optimizer.scheme = s;
            run_experiment_threads(&c, threads).map(|r| (s, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { runs })
}

/// Loss trajectories of the relational task on the original inputs and on
/// inputs and targets rotated by one fixed `U` in `O(d)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRobustness {
    pub seed: u64,
    pub frame_seed: u64,
    pub losses: Vec<f64>,
    pub rotated_losses: Vec<f64>,
    pub max_abs_diff: f64,
}

/// Trains the relational model from the same initialization on both frames.
/// Shapes, temperature, learning rate and step count come from `cfg`.
pub fn frame_robustness(cfg: &ExperimentConfig, seed: u64, frame_seed: u64) -> Result<FrameRobustness> {
    let cfg = ExperimentConfig {
        task: TaskKind::TeacherStudentRelational,
        optimizer: crate::optim::OptimizerConfig { scheme: Scheme::BaselineSgd, ..cfg.optimizer.clone() },
        seeds: vec![seed],
        ..cfg.clone()
    };
    cfg.validate()?;
    let task = generate_task(&cfg, seed)?;
    let u = random_orthogonal(cfg.d, frame_seed);
    let rotate = |xs: &[TokenMatrix]| xs.iter().map(|x| x.reframe(&u)).collect::<Vec<_>>();
    let rotated = Batch::new(rotate(task.batch.inputs()), rotate(task.batch.targets()))?;

    let trajectory = |batch: &Batch| -> Result<Vec<f64>> {
        let out = train(&cfg, seed, batch, initial_state(&cfg, seed));
        if let Some(f) = out.failure {
            return Err(Error::InvalidArgument(format!("frame-robustness run failed at step {}: {}", f.step, f.error)));
        }
        Ok(out.records.iter().map(|r| r.loss).collect())
    };
    let losses = trajectory(&task.batch)?;
    let rotated_losses = trajectory(&rotated)?;
    let max_abs_diff = losses.iter().zip(&rotated_losses).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(FrameRobustness { seed, frame_seed, losses, rotated_losses, max_abs_diff })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerConfig;

    fn small(scheme: Scheme, steps: usize) -> ExperimentConfig {
        ExperimentConfig {
            seeds: vec![0, 1, 2],
            optimizer: OptimizerConfig { steps, ..OptimizerConfig::with_scheme(scheme) },
            ..Default::default()
        }
    }

    #[test]
    fn tasks_are_deterministic_and_seed_dependent() {
        let cfg = ExperimentConfig::default();
        let a = generate_task(&cfg, 5).unwrap();
        let b = generate_task(&cfg, 5).unwrap();
        assert_eq!(a.batch, b.batch);
        assert_eq!(a.teacher, b.teacher);
        let Teacher::Dot(t) = &a.teacher else { panic!("dot task expected") };
        assert!(model_loss(t, &a.batch).unwrap() <= 1e-15);
        for s in 0..100u64 {
            let x = generate_task(&cfg, 2 * s).unwrap();
            let y = generate_task(&cfg, 2 * s + 1).unwrap();
            assert_ne!(x.batch, y.batch);
        }
    }

    #[test]
    fn relational_teacher_fits_its_own_task() {
        let cfg = ExperimentConfig { task: TaskKind::TeacherStudentRelational, ..Default::default() };
        let task = generate_task(&cfg, 3).unwrap();
        let Teacher::Relational(f) = &task.teacher else { panic!("relational task expected") };
        assert!(relational_loss(f, cfg.tau(), &task.batch).unwrap() <= 1e-15);
    }

    #[test]
    fn zero_steps_record_initial_state_only() {
        let result = run_experiment(&small(Scheme::BaselineSgd, 0)).unwrap();
        assert_eq!(result.records().count(), 3);
        assert!(result.records().all(|r| r.step == 0 && r.charge_drift_qk == 0.0));
    }

    #[test]
    fn schemes_share_their_initial_loss() {
        let base = run_experiment(&small(Scheme::BaselineSgd, 2)).unwrap();
        for scheme in [Scheme::ProjectedSgd, Scheme::InvariantDescent, Scheme::DressedSgd] {
            let other = run_experiment(&small(scheme, 2)).unwrap();
            for (a, b) in base.outcomes.iter().zip(&other.outcomes) {
                assert!((a.records[0].loss - b.records[0].loss).abs() <= 1e-14);
            }
            if scheme == Scheme::InvariantDescent {
                assert!(other.records().all(|r| r.orbit_component_norm == 0.0 && r.charge_drift_vo == 0.0));
            }
        }
        assert!(base.records().all(|r| r.orbit_component_norm >= 0.0));
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let cfg = small(Scheme::DressedSgd, 5);
        let a = run_experiment_threads(&cfg, Some(1)).unwrap();
        let b = run_experiment_threads(&cfg, Some(3)).unwrap();
        assert_eq!(a.records().collect::<Vec<_>>(), b.records().collect::<Vec<_>>());
        assert!(run_experiment_threads(&cfg, Some(0)).is_err());
    }

    #[test]
    fn divergence_is_flagged() {
        let mut cfg = small(Scheme::BaselineSgd, 200);
        cfg.optimizer.learning_rate = 1e8;
        let outcome = run_seed(&cfg, 0);
        let f = outcome.failure.clone().expect("huge learning rate should diverge");
        assert_eq!(outcome.records.len(), f.step);
        assert!(outcome.records.iter().all(MetricsRecord::is_finite));
        assert!(outcome.final_loss().is_none());
    }

    #[test]
    fn failed_seed_does_not_contaminate_others() {
        let cfg = small(Scheme::ProjectedSgd, 4);
        let faulty = run_with(&cfg, None, |c, s| {
            if s == 1 {
                let mut bad = c.clone();
                bad.optimizer.learning_rate = 1e300;
                run_seed(&bad, s)
            } else {
                run_seed(c, s)
            }
        })
        .unwrap();
        assert_eq!(faulty.failures().len(), 1);
        let clean = run_experiment(&ExperimentConfig { seeds: vec![0, 2], ..cfg }).unwrap();
        let kept: Vec<_> = faulty.records().filter(|r| r.seed != 1).collect();
        assert_eq!(kept, clean.records().collect::<Vec<_>>());
        assert_eq!(faulty.final_losses(), clean.final_losses());
    }

    #[test]
    fn loss_stats() {
        let s = LossStats::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, Some(2.0));
        assert_eq!(s.var, Some(1.0));
        assert_eq!(LossStats::of(&[4.0]).var, Some(0.0));
        assert_eq!(LossStats::of(&[]).mean, None);
    }

    #[test]
    fn relational_training_is_frame_robust() {
        let mut cfg = ExperimentConfig::default();
        cfg.optimizer.steps = 30;
        let fr = frame_robustness(&cfg, 1, 2).unwrap();
        assert_eq!(fr.losses.len(), 31);
        assert!(fr.max_abs_diff <= 1e-8);
        assert!(fr.losses.last() < fr.losses.first());
    }
}
