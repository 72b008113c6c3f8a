//! TOML experiment configuration.
//!
//! ```toml
//! [environment]
//! kind = "hidden_object_world"      # tiger | hidden_object_world | json
//! num_locations = 8
//! prior_weights = [8, 4, 2, 1, 1, 1, 1, 1]
//! horizon = 12
//! detection = 0.7                   # default 1.0
//! fully_observed = false
//!
//! [leap]
//! num_iterations = 3
//! rollouts_per_iteration = 200
//! root_seed = 7
//! teacher = { kind = "constrained", delta = 0.1 }
//! update_rule = { kind = "sft" }
//!
//! [analysis]
//! evaluation = "monte_carlo"
//!
//! [output]
//! dir = "runs/example"
//! formats = ["json", "csv"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::worlds::build_tiger_with;
use crate::env::{build_hidden_object_world_with, fully_observed, ObjectWorldParams, PomdpSpec, TigerParams};
use crate::error::{LeapError, Result};
use crate::learn::{AnalysisConfig, LeapConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    Tiger {
        #[serde(default = "tiger_defaults::accuracy")]
        accuracy: f64,
        #[serde(default = "tiger_defaults::listen_cost")]
        listen_cost: f64,
        #[serde(default = "tiger_defaults::correct_reward")]
        correct_reward: f64,
        #[serde(default = "tiger_defaults::wrong_penalty")]
        wrong_penalty: f64,
        horizon: usize,
        #[serde(default)]
        fully_observed: bool,
    },
    HiddenObjectWorld {
        num_locations: usize,
        prior_weights: Vec<f64>,
        horizon: usize,
        #[serde(default = "object_defaults::move_cost")]
        move_cost: f64,
        #[serde(default = "object_defaults::deliver_reward")]
        deliver_reward: f64,
        /// Probability of seeing the object when standing on it.
        #[serde(default = "object_defaults::detection")]
        detection: f64,
        #[serde(default)]
        fully_observed: bool,
    },
    /// A serialized environment; relative paths resolve against the config file.
    Json {
        path: PathBuf,
        #[serde(default)]
        fully_observed: bool,
    },
}

mod tiger_defaults {
    use crate::env::TigerParams;

    pub fn accuracy() -> f64 {
        TigerParams::default().accuracy
    }
    pub fn listen_cost() -> f64 {
        TigerParams::default().listen_cost
    }
    pub fn correct_reward() -> f64 {
        TigerParams::default().correct_reward
    }
    pub fn wrong_penalty() -> f64 {
        TigerParams::default().wrong_penalty
    }
}

mod object_defaults {
    pub fn move_cost() -> f64 {
        0.1
    }
    pub fn deliver_reward() -> f64 {
        10.0
    }
    pub fn detection() -> f64 {
        1.0
    }
}

impl EnvironmentConfig {
    pub fn build(&self, base_dir: &Path) -> Result<PomdpSpec> {
        let (spec, full) = match self {
            EnvironmentConfig::Tiger {
                accuracy,
                listen_cost,
                correct_reward,
                wrong_penalty,
                horizon,
                fully_observed,
            } => (
                build_tiger_with(TigerParams {
                    accuracy: *accuracy,
                    listen_cost: *listen_cost,
                    correct_reward: *correct_reward,
                    wrong_penalty: *wrong_penalty,
                    horizon: *horizon,
                })?,
                *fully_observed,
            ),
            EnvironmentConfig::HiddenObjectWorld {
                num_locations,
                prior_weights,
                horizon,
                move_cost,
                deliver_reward,
                detection,
                fully_observed,
            } => (
                build_hidden_object_world_with(&ObjectWorldParams {
                    num_locations: *num_locations,
                    prior_weights: prior_weights.clone(),
                    horizon: *horizon,
                    move_cost: *move_cost,
                    deliver_reward: *deliver_reward,
                    detection: *detection,
                })?,
                *fully_observed,
            ),
            EnvironmentConfig::Json { path, fully_observed } => {
                let path = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                (PomdpSpec::load(&path)?, *fully_observed)
            }
        };
        if full {
            fully_observed(&spec)
        } else {
            Ok(spec)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against the working directory.
    pub dir: PathBuf,
    #[serde(default = "all_formats")]
    pub formats: Vec<OutputFormat>,
}

fn all_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Json, OutputFormat::Csv]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    pub leap: LeapConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    pub output: OutputConfig,
    /// Directory that relative environment paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses and validates. Errors carry `line:column` positions.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let at = e.span().map(|s| position(text, s.start)).unwrap_or_default();
            LeapError::Config(format!("{origin}{at}: {}", e.message()))
        })?;
        config.validate().map_err(|(key, msg)| {
            // Messages name the offending field first when there is one.
            let field = msg.split_whitespace().next().unwrap_or_default();
            let at = key_position(text, field).or_else(|| key_position(text, &key)).unwrap_or_default();
            LeapError::Config(format!("{origin}{at}: {key}: {msg}"))
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LeapError::Config(format!("{}: cannot read config: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text, &path.display().to_string())?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    /// Semantic checks; failures name the offending key.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        self.leap.validate().map_err(|e| ("leap".to_string(), strip(e)))?;
        self.analysis.validate().map_err(|e| ("analysis".to_string(), strip(e)))?;
        if self.output.formats.is_empty() {
            return Err(("formats".into(), "at least one output format is required".into()));
        }
        if self.output.dir.as_os_str().is_empty() {
            return Err(("dir".into(), "output directory must not be empty".into()));
        }
        Ok(())
    }

    pub fn build_environment(&self) -> Result<PomdpSpec> {
        self.environment.build(&self.base_dir)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LeapError::Config(e.to_string()))
    }
}

fn strip(e: LeapError) -> String {
    match e {
        LeapError::InvalidArgument(m) | LeapError::Config(m) => m,
        other => other.to_string(),
    }
}

fn position(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    format!(":{line}:{column}")
}

/// Position of the first line that assigns `key` or opens table `[key]`.
fn key_position(text: &str, key: &str) -> Option<String> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let assigns = trimmed.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='));
        if assigns || trimmed.starts_with(&format!("[{key}]")) {
            return Some(position(text, offset + line.len() - trimmed.len()));
        }
        offset += line.len();
    }
    None
}
