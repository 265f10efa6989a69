//! Experiment configuration: TOML (or JSON) with unknown keys rejected.

use std::path::{Path, PathBuf};

use dkbo::bo::{BoConfig, InitPolicy};
use dkbo::deep::{TrainConfig, DEFAULT_DROPOUT, DEFAULT_PROJECTION_DIM};
use dkbo::gp::{FitOptions, SurrogateKind};
use dkbo::store::{load_pool, PoolFormat};
use dkbo::{Acquisition, CandidatePool};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub init: InitPolicy,
    #[serde(default)]
    pub projection: ProjectionConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    /// Inferred from the extension when absent.
    #[serde(default)]
    pub format: Option<PoolFormat>,
    /// Per-dimension min-max scaling of the embeddings.
    #[serde(default)]
    pub minmax_scale: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub surrogates: Vec<SurrogateKind>,
    pub acquisition: Acquisition,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub warm_start: bool,
    pub coverage_quantile: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            surrogates: vec![SurrogateKind::Deep],
            acquisition: Acquisition::Ei,
            iterations: dkbo::bo::DEFAULT_ITERATIONS,
            seeds: (1..=20).collect(),
            warm_start: false,
            coverage_quantile: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    pub m: usize,
    pub dropout: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { m: DEFAULT_PROJECTION_DIM, dropout: DEFAULT_DROPOUT }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    pub train_size: usize,
    pub top_quantile: f64,
    pub weight_hi: f64,
    pub weight_lo: f64,
    pub class_hi_q: f64,
    pub class_lo_q: f64,
    pub histogram_bins: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            train_size: 60,
            top_quantile: 0.05,
            weight_hi: 3.0,
            weight_lo: 1.0,
            class_hi_q: 0.1,
            class_lo_q: 0.1,
            histogram_bins: 30,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// One arm of a sweep: a surrogate with EI, or the random baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    Ei(SurrogateKind),
    Random,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Ei(kind) => kind.name(),
            Arm::Random => "random",
        }
    }

    pub fn surrogate(self) -> SurrogateKind {
        match self {
            Arm::Ei(kind) => kind,
            Arm::Random => SurrogateKind::Fixed,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves the dataset path against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if cfg.dataset.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset.path = dir.join(&cfg.dataset.path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        let ex = &self.experiment;
        if ex.seeds.is_empty() {
            return bad("experiment.seeds must not be empty".into());
        }
        let mut seeds = ex.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != ex.seeds.len() {
            return bad("experiment.seeds contains duplicates".into());
        }
        if ex.acquisition == Acquisition::Ei && ex.surrogates.is_empty() {
            return bad("experiment.surrogates must not be empty".into());
        }
        if !(ex.coverage_quantile > 0.0 && ex.coverage_quantile <= 1.0) {
            return bad(format!("experiment.coverage_quantile must be in (0, 1], got {}", ex.coverage_quantile));
        }
        let d = &self.diagnose;
        if d.train_size < 2 {
            return bad("diagnose.train_size must be at least 2".into());
        }
        if !(d.top_quantile > 0.0 && d.top_quantile <= 1.0) || !(d.weight_hi > 0.0) || !(d.weight_lo > 0.0) {
            return bad("diagnose quantile and weights must be positive".into());
        }
        if !(d.class_hi_q > 0.0 && d.class_lo_q > 0.0 && d.class_hi_q + d.class_lo_q <= 1.0) {
            return bad("diagnose class quantiles must be positive with sum ≤ 1".into());
        }
        if d.histogram_bins == 0 {
            return bad("diagnose.histogram_bins must be positive".into());
        }
        for arm in self.arms() {
            self.bo_config(arm).validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Arms in a fixed order, independent of how they were listed.
    pub fn arms(&self) -> Vec<Arm> {
        if self.experiment.acquisition == Acquisition::Random {
            return vec![Arm::Random];
        }
        let mut arms: Vec<Arm> = self.experiment.surrogates.iter().map(|&k| Arm::Ei(k)).collect();
        arms.sort();
        arms.dedup();
        arms
    }

    pub fn bo_config(&self, arm: Arm) -> BoConfig {
        BoConfig {
            surrogate: arm.surrogate(),
            acquisition: if arm == Arm::Random { Acquisition::Random } else { Acquisition::Ei },
            init: self.init,
            iterations: self.experiment.iterations,
            fit: self.fit,
            train: self.train.clone(),
            projection_dim: self.projection.m,
            dropout: self.projection.dropout,
            warm_start: self.experiment.warm_start,
        }
    }

    pub fn pool_format(&self) -> PoolFormat {
        self.dataset.pool_format()
    }

    pub fn load_pool(&self) -> Result<CandidatePool, CliError> {
        self.dataset.load_pool()
    }
}

impl DatasetConfig {
    pub fn pool_format(&self) -> PoolFormat {
        self.format.unwrap_or_else(|| PoolFormat::from_path(&self.path))
    }

    pub fn load_pool(&self) -> Result<CandidatePool, CliError> {
        let pool = load_pool(&self.path, self.pool_format())
            .map_err(|e| CliError::Input(format!("{}: {e}", self.path.display())))?;
        Ok(if self.minmax_scale { pool.minmax_scaled() } else { pool })
    }
}
