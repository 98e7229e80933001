use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::ScalarScorer;
use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// A random dot-product head generates the targets.
    #[default]
    TeacherStudentDot,
    /// A random relational scorer generates the targets.
    TeacherStudentRelational,
}

/// One experiment, read from a single JSON document. Missing fields take
/// the desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub n: usize,
    pub d: usize,
    pub d_h: usize,
    /// Head count of the multi-head layer used by the invariance checks.
    #[serde(rename = "H", alias = "heads")]
    pub heads: usize,
    pub seeds: Vec<u64>,
    pub optimizer: OptimizerConfig,
    /// Relational-scorer temperature; `sqrt(d_h)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub scorer_width: usize,
    /// Training examples per seed, used as one full batch.
    pub batch_size: usize,
    pub output_dir: PathBuf,
    /// Record wall-clock seconds per step. Off by default so reruns are
    /// byte-identical.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::TeacherStudentDot,
            n: 8,
            d: 16,
            d_h: 4,
            heads: 2,
            seeds: (0..25).collect(),
            optimizer: OptimizerConfig::default(),
            tau: None,
            scorer_width: ScalarScorer::DEFAULT_WIDTH,
            batch_size: 4,
            output_dir: PathBuf::from("results"),
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
        let cfg = Self::from_json(&text).map_err(|source| Error::ConfigParse { path: path.to_owned(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or_else(|| (self.d_h as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n", self.n),
            ("d", self.d),
            ("d_h", self.d_h),
            ("H", self.heads),
            ("batch_size", self.batch_size),
            ("scorer_width", self.scorer_width),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be nonempty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        if let Some(t) = self.tau {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidConfig(format!("tau must be > 0, got {t}")));
            }
        }
        self.optimizer.validate()?;
        if self.task == TaskKind::TeacherStudentRelational && self.optimizer.scheme != Scheme::BaselineSgd {
            return Err(Error::InvalidConfig(format!(
                "the relational task has no head-space symmetry; scheme {} does not apply",
                self.optimizer.scheme.name()
            )));
        }
        Ok(())
    }
}
