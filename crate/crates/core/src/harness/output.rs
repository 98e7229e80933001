use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentConfig, TaskKind};
use super::run::{Comparison, LossStats, RunResult, SeedFailure};
use crate::error::{Error, Result};
use crate::optim::Scheme;
use crate::symmetry::METRIC_SPACE;

pub const SUITE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const METRICS_HEADER: &str =
    "step,seed,loss,eff_rank_gqk,eff_rank_gvo,charge_drift_qk,charge_drift_vo,orbit_component_norm,wall_time_s";

#[derive(Debug, Clone, Serialize)]
pub struct SeedLoss {
    pub seed: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub suite_version: &'static str,
    pub metric_space: &'static str,
    pub config: ExperimentConfig,
    pub per_seed_final_loss: Vec<SeedLoss>,
    pub mean_final_loss: Option<f64>,
    pub var_final_loss: Option<f64>,
    pub min_final_loss: Option<f64>,
    pub max_final_loss: Option<f64>,
    pub failed_seeds: Vec<SeedFailure>,
    /// How the charge columns should be read for this scheme.
    pub charge_status: &'static str,
    pub metric_definitions: BTreeMap<&'static str, &'static str>,
}

fn metric_definitions(task: TaskKind) -> BTreeMap<&'static str, &'static str> {
    let mut m = BTreeMap::new();
    m.insert("loss", "mean over the batch of |Y - T|_F^2 / (n d)");
    m.insert("wall_time_s", "seconds spent on the step; 0 unless timing is enabled");
    match task {
        TaskKind::TeacherStudentDot => {
            m.insert("eff_rank_gqk", "effective rank of G_QK = W_Q^T W_K");
            m.insert("eff_rank_gvo", "effective rank of G_VO = W_O W_V");
            m.insert("charge_drift_qk", "|Q_QK(t) - Q_QK(0)|_F with Q_QK = W_Q W_Q^T - W_K W_K^T");
            m.insert("charge_drift_vo", "|Q_VO(t) - Q_VO(0)|_F with Q_VO = W_V W_V^T - W_O^T W_O");
            m.insert("orbit_component_norm", "|T^T g|, the tangent component of the loss gradient");
        }
        TaskKind::TeacherStudentRelational => {
            m.insert("eff_rank_gqk", "effective rank of the attention matrix on the first input");
            m.insert("eff_rank_gvo", "effective rank of the output Y on the first input");
            m.insert("charge_drift_qk", "0: the scorer has no head-space symmetry");
            m.insert("charge_drift_vo", "0: the scorer has no head-space symmetry");
            m.insert("orbit_component_norm", "0: the scorer has no head-space symmetry");
        }
    }
    m
}

fn charge_status(cfg: &ExperimentConfig) -> &'static str {
    match (cfg.task, cfg.optimizer.scheme) {
        (TaskKind::TeacherStudentRelational, _) => "not applicable",
        (_, Scheme::InvariantDescent) => "exactly reduced",
        (_, Scheme::DressedSgd) => "measured; re-dressing resets the charges",
        _ => "measured",
    }
}

pub fn summarize(result: &RunResult) -> Summary {
    let stats = result.stats();
    Summary {
        suite_version: SUITE_VERSION,
        metric_space: METRIC_SPACE,
        config: result.config.clone(),
        per_seed_final_loss: result.final_losses().into_iter().map(|(seed, loss)| SeedLoss { seed, loss }).collect(),
        mean_final_loss: stats.mean,
        var_final_loss: stats.var,
        min_final_loss: stats.min,
        max_final_loss: stats.max,
        failed_seeds: result.failures().into_iter().cloned().collect(),
        charge_status: charge_status(&result.config),
        metric_definitions: metric_definitions(result.config.task),
    }
}

#[derive(Debug, Clone)]
pub struct OutputFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub attention: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_owned(), source }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialize(e.to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn metrics_csv(result: &RunResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut any = false;
    for r in result.records() {
        w.serialize(r).map_err(csv_err)?;
        any = true;
    }
    if !any {
        w.write_record(METRICS_HEADER.split(',')).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Serialize(e.to_string()))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    text.push('\n');
    Ok(text.into_bytes())
}

/// Writes `metrics.csv`, `summary.json` and, when the first seed produced a
/// model, `attention_final.csv` into `dir`.
pub fn emit_outputs(result: &RunResult, dir: &Path) -> Result<OutputFiles> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let metrics = dir.join("metrics.csv");
    write_file(&metrics, &metrics_csv(result)?)?;

    let summary = dir.join("summary.json");
    write_file(&summary, &json_bytes(&summarize(result))?)?;

    let attention = match result.outcomes.first().and_then(|o| o.final_attention.as_ref()) {
        Some(a) => {
            let path = dir.join("attention_final.csv");
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            for i in 0..a.rows() {
                w.serialize(a.row(i)).map_err(csv_err)?;
            }
            write_file(&path, &w.into_inner().map_err(|e| Error::Serialize(e.to_string()))?)?;
            Some(path)
        }
        None => None,
    };
    Ok(OutputFiles { metrics, summary, attention })
}

#[derive(Debug, Clone, Serialize)]
struct SchemeRow {
    scheme: Scheme,
    completed_seeds: usize,
    failed_seeds: usize,
    #[serde(flatten)]
    stats: LossStats,
}

#[derive(Debug, Clone, Serialize)]
struct ComparisonSummary {
    suite_version: &'static str,
    metric_space: &'static str,
    seeds: Vec<u64>,
    schemes: Vec<SchemeRow>,
}

/// One output directory per scheme plus `comparison.json` with the
/// across-seed statistics of each.
pub fn emit_comparison(cmp: &Comparison, dir: &Path) -> Result<PathBuf> {
    let mut rows = Vec::new();
    for (scheme, run) in &cmp.runs {
        emit_outputs(run, &dir.join(scheme.name()))?;
        let stats = run.stats();
        rows.push(SchemeRow {
            scheme: *scheme,
            completed_seeds: stats.count,
            failed_seeds: run.failures().len(),
            stats,
        });
    }
    let seeds = cmp.runs.first().map(|(_, r)| r.config.seeds.clone()).unwrap_or_default();
    let path = dir.join("comparison.json");
    write_file(
        &path,
        &json_bytes(&ComparisonSummary { suite_version: SUITE_VERSION, metric_space: METRIC_SPACE, seeds, schemes: rows })?,
    )?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run_experiment;
    use crate::optim::OptimizerConfig;

    fn cfg(steps: usize) -> ExperimentConfig {
        ExperimentConfig {
            seeds: vec![4, 9],
            optimizer: OptimizerConfig { steps, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn csv_has_fixed_header_and_row_count() {
        let result = run_experiment(&cfg(3)).unwrap();
        let bytes = metrics_csv(&result).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        assert_eq!(lines.count(), 2 * 4);
    }

    #[test]
    fn outputs_are_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(5);
        let a = emit_outputs(&run_experiment(&c).unwrap(), &dir.path().join("a")).unwrap();
        let b = emit_outputs(&run_experiment(&c).unwrap(), &dir.path().join("b")).unwrap();
        for (x, y) in [(&a.metrics, &b.metrics), (&a.summary, &b.summary)] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let att = std::fs::read_to_string(a.attention.unwrap()).unwrap();
        assert_eq!(att.lines().count(), c.n);
        assert!(att.lines().all(|l| l.split(',').count() == c.n));

        let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(&a.summary).unwrap()).unwrap();
        for key in ["config", "per_seed_final_loss", "mean_final_loss", "var_final_loss", "metric_space", "suite_version"] {
            assert!(summary.get(key).is_some(), "missing {key}");
        }
        assert_eq!(summary["metric_space"], "euclidean");
    }

    #[test]
    fn unwritable_directory_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let err = emit_outputs(&run_experiment(&cfg(0)).unwrap(), &blocker.join("sub")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("file"));
    }
}
