//! Config-driven runs and parameter sweeps, with atomic artifact output.
//!
//! A run directory holds `metrics.json`, `metrics.csv`, `snapshots/pi_<i>.json`
//! and `manifest.json`. Everything is computed before anything is written;
//! files go to temporaries in the destination directory and are renamed into
//! place only once all of them exist.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::analysis::MetricsReport;
use crate::config::{ExperimentConfig, OutputFormat};
use crate::env::PomdpSpec;
use crate::error::{LeapError, Result};
use crate::expert::ExpertBundle;
use crate::learn::{collect_demos, digest, leap_run_with, CorrectionDataset, LeapOutcome, TeacherKind};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sample count used when a λ sweep starts from a non-sampling teacher.
pub const DEFAULT_PENALTY_SAMPLES: usize = 8;

/// Process exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &LeapError) -> i32 {
    match err {
        LeapError::Config(_) => 2,
        _ => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config_digest: String,
    pub root_seed: u64,
    pub environment: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub outcome: LeapOutcome,
    pub manifest: RunManifest,
}

impl RunSummary {
    pub fn report(&self) -> &MetricsReport {
        &self.outcome.report
    }
}

/// Loads a config, applies command-line overrides and builds its environment.
/// Every failure here is a configuration error.
pub fn load_experiment(
    path: &Path,
    out_dir: Option<&Path>,
    seed: Option<u64>,
) -> Result<(ExperimentConfig, PomdpSpec)> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(dir) = out_dir {
        config.output.dir = dir.to_path_buf();
    }
    if let Some(seed) = seed {
        config.leap.root_seed = seed;
    }
    let spec =
        config.build_environment().map_err(|e| LeapError::Config(format!("{}: [environment]: {e}", path.display())))?;
    Ok((config, spec))
}

/// Demonstrations, LEAP, analysis, then artifacts under `config.output.dir`.
pub fn run_experiment(config: &ExperimentConfig, spec: &PomdpSpec) -> Result<RunSummary> {
    let bundle = ExpertBundle::new(Arc::new(spec.clone()), config.leap.expert_temperature)?;
    let demos = collect_demos(&bundle, config.leap.num_demos, config.leap.root_seed)?;
    let dataset = CorrectionDataset::new(spec.num_actions, demos)?;
    let mut outcome = leap_run_with(spec, &config.leap, &config.analysis, dataset)?;
    outcome.report.metadata.config_digest = config_digest(config, spec)?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    if config.output.formats.contains(&OutputFormat::Json) {
        files.push(("metrics.json".into(), outcome.report.to_json()?.into_bytes()));
    }
    if config.output.formats.contains(&OutputFormat::Csv) {
        files.push(("metrics.csv".into(), outcome.report.to_csv()?.into_bytes()));
    }
    for snap in &outcome.snapshots {
        files.push((format!("snapshots/{}.json", snap.label), snap.to_json()?.into_bytes()));
    }
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_digest: outcome.report.metadata.config_digest.clone(),
        root_seed: config.leap.root_seed,
        environment: spec.name.clone(),
        files: files.iter().map(|(n, _)| n.clone()).collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    files.push(("manifest.json".into(), text.into_bytes()));
    write_all_atomically(&config.output.dir, &files)?;
    Ok(RunSummary { out_dir: config.output.dir.clone(), outcome, manifest })
}

/// Digest of everything that determines a run's numbers: the learning and
/// analysis settings and the environment itself. Output location is excluded.
pub fn config_digest(config: &ExperimentConfig, spec: &PomdpSpec) -> Result<String> {
    digest(&(&config.leap, &config.analysis, spec))
}

/// Writes every file to a temporary beside its destination, then renames
/// them all into place. A failure before the renames leaves nothing behind.
pub fn write_all_atomically(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let target = dir.join(name);
        let parent = target.parent().unwrap_or(dir);
        std::fs::create_dir_all(parent)?;
        let mut tmp = NamedTempFile::new_in(parent)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, target));
    }
    for (tmp, target) in staged {
        tmp.persist(&target).map_err(|e| LeapError::Io(e.error))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// KL radius of the constrained teacher.
    Delta,
    /// Penalty weight of the sampled teacher.
    Lambda,
    TruncationWindow,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::Delta => "delta",
            SweepParam::Lambda => "lambda",
            SweepParam::TruncationWindow => "truncation_window",
        }
    }

    /// Copy of `config` with this parameter set to `value`.
    pub fn apply(&self, config: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut out = config.clone();
        match self {
            SweepParam::Delta => {
                if !(value >= 0.0) {
                    return Err(LeapError::Config(format!("delta must be nonnegative, got {value}")));
                }
                out.leap.teacher = TeacherKind::Constrained { delta: value };
            }
            SweepParam::Lambda => {
                if !(value >= 0.0) {
                    return Err(LeapError::Config(format!("lambda must be nonnegative, got {value}")));
                }
                let num_samples = match config.leap.teacher {
                    TeacherKind::Sampled { num_samples, .. } => num_samples,
                    _ => DEFAULT_PENALTY_SAMPLES,
                };
                out.leap.teacher = TeacherKind::Sampled { lambda: value, num_samples };
            }
            SweepParam::TruncationWindow => {
                if !(value >= 0.0 && value.fract() == 0.0 && value < 1e9) {
                    return Err(LeapError::Config(format!(
                        "truncation_window must be a nonnegative integer, got {value}"
                    )));
                }
                out.leap.truncation_window = value as usize;
            }
        }
        out.output.dir = config.output.dir.join(format!("{}_{}", self.as_str(), value));
        Ok(out)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = LeapError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(SweepParam::Delta),
            "lambda" => Ok(SweepParam::Lambda),
            "truncation_window" => Ok(SweepParam::TruncationWindow),
            other => Err(LeapError::Config(format!(
                "unknown sweep parameter '{other}' (expected delta, lambda or truncation_window)"
            ))),
        }
    }
}

/// One sweep point, summarised by its last iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub value: f64,
    pub final_success: f64,
    #[serde(rename = "final_J")]
    pub final_j: f64,
    pub theorem1_slack: f64,
    pub realizability_gap: f64,
    /// Standard error of `final_success`; zero under exact evaluation.
    pub final_success_se: f64,
}

pub const TRADEOFF_COLUMNS: [&str; 6] =
    ["value", "final_success", "final_J", "theorem1_slack", "realizability_gap", "final_success_se"];

/// Parses a comma-separated list of numbers.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| LeapError::Config(format!("'{s}' is not a number"))))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(LeapError::Config("sweep needs at least one value".into()));
    }
    Ok(values)
}

/// One full run per value, all sharing the config's root seed. Points run
/// concurrently, each in `<out>/<param>_<value>/`; `tradeoff.csv` is written
/// to `<out>` once every point has finished. Rows follow the order of `values`.
pub fn sweep_tradeoff(
    config: &ExperimentConfig,
    spec: &PomdpSpec,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<TradeoffRow>> {
    if values.is_empty() {
        return Err(LeapError::Config("sweep needs at least one value".into()));
    }
    let configs = values.iter().map(|v| param.apply(config, *v)).collect::<Result<Vec<_>>>()?;
    for c in &configs {
        c.leap.validate().map_err(|e| LeapError::Config(e.to_string()))?;
    }
    let rows = configs
        .par_iter()
        .zip(values)
        .map(|(c, v)| {
            let run = run_experiment(c, spec)?;
            Ok(tradeoff_row(*v, &run.outcome))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        out.serialize(row)?;
    }
    let bytes = out.into_inner().map_err(|e| LeapError::Io(e.into_error()))?;
    write_all_atomically(&config.output.dir, &[("tradeoff.csv".into(), bytes)])?;
    Ok(rows)
}

pub fn tradeoff_row(value: f64, outcome: &LeapOutcome) -> TradeoffRow {
    let last = outcome.report.rows.last().expect("a run has at least one row");
    let perf = outcome.performance.last().expect("a run has at least one snapshot");
    TradeoffRow {
        value,
        final_success: last.success_rate,
        final_j: last.j,
        theorem1_slack: last.theorem1_slack,
        realizability_gap: last.realizability_gap,
        final_success_se: perf.success_se,
    }
}

pub fn read_tradeoff_csv(path: &Path) -> Result<Vec<TradeoffRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::invalid;

    fn config(dir: &Path) -> ExperimentConfig {
        let text = format!(
            r#"
[environment]
kind = "tiger"
horizon = 3

[leap]
num_iterations = 2
rollouts_per_iteration = 12
num_demos = 10
root_seed = 5
truncation_window = 1

[output]
dir = "{}"
"#,
            dir.display()
        );
        ExperimentConfig::from_toml_str(&text, "test").unwrap()
    }

    #[test]
    fn run_writes_every_artifact() {
        let tmp = tempfile::tempdir().unwrap();
        let c = config(&tmp.path().join("run"));
        let spec = c.build_environment().unwrap();
        let summary = run_experiment(&c, &spec).unwrap();
        let dir = tmp.path().join("run");
        for f in ["metrics.json", "metrics.csv", "manifest.json", "snapshots/pi_0.json", "snapshots/pi_2.json"] {
            assert!(dir.join(f).is_file(), "{f}");
        }
        let csv = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        let manifest: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest, summary.manifest);
        assert_eq!(manifest.root_seed, 5);
        let leftovers: Vec<_> = std::fs::read_dir(&dir)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn digest_ignores_output_location() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (config(&tmp.path().join("a")), config(&tmp.path().join("b")));
        let spec = a.build_environment().unwrap();
        assert_eq!(config_digest(&a, &spec).unwrap(), config_digest(&b, &spec).unwrap());
        let mut c = a.clone();
        c.leap.root_seed += 1;
        assert_ne!(config_digest(&a, &spec).unwrap(), config_digest(&c, &spec).unwrap());
    }

    #[test]
    fn sweep_rows_follow_value_order() {
        let tmp = tempfile::tempdir().unwrap();
        let c = config(tmp.path());
        let spec = c.build_environment().unwrap();
        let rows = sweep_tradeoff(&c, &spec, SweepParam::Delta, &[0.5, 0.0, 0.1]).unwrap();
        assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![0.5, 0.0, 0.1]);
        assert_eq!(read_tradeoff_csv(&tmp.path().join("tradeoff.csv")).unwrap(), rows);
        assert!(tmp.path().join("delta_0.1/metrics.json").is_file());
    }

    #[test]
    fn sweep_parameters_parse_and_apply() {
        let tmp = tempfile::tempdir().unwrap();
        let c = config(tmp.path());
        assert_eq!("lambda".parse::<SweepParam>().unwrap(), SweepParam::Lambda);
        assert!(matches!("gamma".parse::<SweepParam>(), Err(LeapError::Config(_))));
        let l = SweepParam::Lambda.apply(&c, 2.0).unwrap();
        assert_eq!(l.leap.teacher, TeacherKind::Sampled { lambda: 2.0, num_samples: DEFAULT_PENALTY_SAMPLES });
        assert_eq!(SweepParam::TruncationWindow.apply(&c, 3.0).unwrap().leap.truncation_window, 3);
        assert!(SweepParam::TruncationWindow.apply(&c, 1.5).is_err());
        assert!(SweepParam::Delta.apply(&c, -1.0).is_err());
        assert_eq!(parse_values("0, 0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_values("a").is_err());
        assert!(parse_values("").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&LeapError::Config("x".into())), 2);
        assert_eq!(exit_code(&invalid("x")), 1);
    }
}
