//! Experiment configuration: one TOML file drives every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::OptimizerConfig;
use crate::datagen::DatasetConfig;
use crate::io;
use crate::metrics::MetricsConfig;
use crate::student::{LabelMode, StudentConfig};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "REBA_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Backbone embedding width d_m.
    pub embed_dim: usize,
    /// Prompt width d_p.
    pub prompt_dim: usize,
    pub film_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embed_dim: 32,
            prompt_dim: 16,
            film_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Run directory. Relative paths resolve against the output root.
    pub out: Option<PathBuf>,
}

fn desk_optimizer() -> OptimizerConfig {
    OptimizerConfig {
        lr: 1e-3,
        ..OptimizerConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Weight of the occlusion correction in the soft labels.
    pub alpha: f64,
    /// Amplitude of the noise that fills masked-out voxels.
    pub eta: f64,
    /// Weight of the functional-consistency loss.
    pub zeta: f64,
    pub dilate_occlusion: bool,
    pub labels: LabelMode,
    pub no_film: bool,
    pub detach_mean: bool,
    /// Evaluate the teacher's soft labels directly.
    pub no_student: bool,
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    pub teacher: OptimizerConfig,
    pub student: OptimizerConfig,
    pub metric: MetricsConfig,
    pub paths: PathsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            alpha: 1.0,
            eta: 0.1,
            zeta: 1.0,
            dilate_occlusion: false,
            labels: LabelMode::Soft,
            no_film: false,
            detach_mean: false,
            no_student: false,
            dataset: DatasetConfig::default(),
            model: ModelSection::default(),
            teacher: desk_optimizer(),
            student: desk_optimizer(),
            metric: MetricsConfig::default(),
            paths: PathsSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed must be <= {}", i64::MAX));
        }
        for (name, v) in [("alpha", self.alpha), ("eta", self.eta), ("zeta", self.zeta)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.model.embed_dim < 4 {
            return bad(format!("model.embed_dim must be >= 4, got {}", self.model.embed_dim));
        }
        self.dataset.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (name, o) in [("teacher", &self.teacher), ("student", &self.student)] {
            o.validate().map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))?;
        }
        self.student_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn student_config(&self) -> StudentConfig {
        StudentConfig {
            prompt_dim: self.model.prompt_dim,
            film_hidden: self.model.film_hidden,
            no_film: self.no_film,
            detach_mean: self.detach_mean,
            zeta: self.zeta,
            labels: self.labels,
        }
    }

    /// SHA-256 of the canonical TOML form, with the output path left out so
    /// that identical experiments in different directories hash the same.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsSection::default();
        io::sha256_hex(c.to_toml().as_bytes())
    }

    /// Run directory: `paths.out` if absolute, otherwise joined onto the
    /// output root (`$REBA_OUTPUT_ROOT` or `runs`). Unset means `<root>/default`.
    pub fn run_dir(&self) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
        match &self.paths.out {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => root.join(p),
            None => root.join("default"),
        }
    }
}
