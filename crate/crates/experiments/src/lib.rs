//! Desk-scale experiment suite: seeded runners that emit [`MetricRecord`]s
//! and pass/fail checks. Trend checks are one-sided sign tests over matched
//! seeds.

mod baseline;
mod kmeans;
mod lanes;
mod merge;
mod record;
mod stats;
mod tde;
mod user_study;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use riskdrive_core::behavior::BehaviorError;
use riskdrive_core::calibration::{CalibrationError, GRID_STEP, THETA_BOUNDS};
use riskdrive_core::planner::{HighwayEpisodeConfig, MergeConfig, OvertakeSceneConfig, PlannerError};
use riskdrive_core::sim::SimError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::{baseline_errors, BaselineConfig};
pub use kmeans::{mean_zeta, run_traffic, TrainingConfig};
pub use record::{from_json, read_csv, to_json, write_csv, MetricRecord, RECORD_COLUMNS};
pub use stats::{upper_tail, SignTest};
pub use tde::{brute_force_expected_frame, scripted_cut_in};
pub use user_study::{THETA_AVERSE, THETA_SEEKING};

/// Significance level of every trend check.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    LaneChanges,
    MergeDistance,
    MergeYield,
    KmeansFit,
    BaselineError,
    UserStudyPair,
    TdeEval,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 7] = [
        ExperimentName::LaneChanges,
        ExperimentName::MergeDistance,
        ExperimentName::MergeYield,
        ExperimentName::KmeansFit,
        ExperimentName::BaselineError,
        ExperimentName::UserStudyPair,
        ExperimentName::TdeEval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::LaneChanges => "lane_changes",
            ExperimentName::MergeDistance => "merge_distance",
            ExperimentName::MergeYield => "merge_yield",
            ExperimentName::KmeansFit => "kmeans_fit",
            ExperimentName::BaselineError => "baseline_error",
            ExperimentName::UserStudyPair => "user_study_pair",
            ExperimentName::TdeEval => "tde_eval",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentName::ALL.into_iter().find(|n| n.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = ExperimentName::ALL.iter().map(|n| n.as_str()).collect();
            ExperimentError::InvalidSpec(format!("unknown experiment {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

/// Scenario settings shared by all experiments; every field has a default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub highway: HighwayEpisodeConfig,
    pub merge: MergeConfig,
    pub baseline: BaselineConfig,
    pub overtake: OvertakeSceneConfig,
    pub training: TrainingConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::InvalidSpec(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// An experiment, its parameter grid and its seeds `seed..seed + seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    /// Risk parameters; the merge experiments use `grid × grid`.
    pub grid: Vec<f64>,
    /// Number of seeds (random annotation sets for `tde_eval`).
    pub seeds: u64,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl ExperimentSpec {
    /// Default grid and seed count of `name`.
    pub fn new(name: ExperimentName) -> Self {
        let (grid, seeds) = match name {
            ExperimentName::LaneChanges | ExperimentName::MergeDistance | ExperimentName::MergeYield => {
                (steps(-4.0, 4.0, 1.0), 20)
            }
            ExperimentName::KmeansFit => (steps(THETA_BOUNDS.0, THETA_BOUNDS.1, GRID_STEP), 20),
            ExperimentName::BaselineError => (vec![0.0, 1.0, 2.0, 3.0], 20),
            ExperimentName::UserStudyPair => (vec![THETA_SEEKING, THETA_AVERSE], 10),
            ExperimentName::TdeEval => (Vec::new(), 1000),
        };
        ExperimentSpec { name, grid, seeds, seed: 0, config: ExperimentConfig::default() }
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_seeds(mut self, seeds: u64) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (self.seed..self.seed + self.seeds).collect()
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds == 0 {
            return Err(ExperimentError::InvalidSpec("at least one seed is required".into()));
        }
        if self.grid.iter().any(|t| !t.is_finite()) {
            return Err(ExperimentError::InvalidSpec("grid values must be finite".into()));
        }
        if self.name != ExperimentName::TdeEval && self.grid.is_empty() {
            return Err(ExperimentError::InvalidSpec(format!("{} needs a non-empty grid", self.name)));
        }
        if self.name == ExperimentName::UserStudyPair && self.grid.len() != 2 {
            return Err(ExperimentError::InvalidSpec("user_study_pair takes exactly [theta_seeking, theta_averse]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.to_string(), passed, detail: detail.into() }
    }
}

/// A file written next to the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file_name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub records: Vec<MetricRecord>,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub artifacts: Vec<Artifact>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Writes `<name>.csv`, `<name>.json` (records) and
    /// `<name>_report.json` (spec and checks) plus any artifacts into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        fs::create_dir_all(dir)?;
        let name = self.spec.name.as_str();
        let mut csv = Vec::new();
        write_csv(&self.records, &mut csv)?;
        fs::write(dir.join(format!("{name}.csv")), csv)?;
        fs::write(dir.join(format!("{name}.json")), to_json(&self.records))?;
        let summary = serde_json::json!({
            "experiment": name,
            "spec": self.spec,
            "checks": self.checks,
            "passed": self.passed(),
        });
        fs::write(dir.join(format!("{name}_report.json")), serde_json::to_string_pretty(&summary)?)?;
        for a in &self.artifacts {
            fs::write(dir.join(&a.file_name), &a.contents)?;
        }
        Ok(())
    }
}

pub fn run(spec: &ExperimentSpec) -> Result<ExperimentReport, ExperimentError> {
    spec.validate()?;
    let (records, checks, artifacts) = match spec.name {
        ExperimentName::LaneChanges => lanes::run(spec)?,
        ExperimentName::MergeDistance | ExperimentName::MergeYield => merge::run(spec)?,
        ExperimentName::KmeansFit => kmeans::run(spec)?,
        ExperimentName::BaselineError => baseline::run(spec)?,
        ExperimentName::UserStudyPair => user_study::run(spec)?,
        ExperimentName::TdeEval => tde::run(spec)?,
    };
    for r in &records {
        r.validate()?;
    }
    Ok(ExperimentReport { spec: spec.clone(), records, checks, artifacts })
}

type RunOutput = (Vec<MetricRecord>, Vec<Check>, Vec<Artifact>);

/// Index of a grid value, compared exactly.
fn grid_index(grid: &[f64], theta: f64) -> Option<usize> {
    grid.iter().position(|&t| t == theta)
}
