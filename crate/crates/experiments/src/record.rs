use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::ExperimentError;

/// One row of experiment output. Unused metrics stay empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRecord {
    pub experiment: String,
    /// Risk parameter of the (first) agent at this grid point.
    pub theta_a: Option<f64>,
    pub theta_b: Option<f64>,
    /// `None` on per-grid-point summary rows.
    pub seed: Option<u64>,
    pub agent_id: Option<u32>,
    pub lane_change_count: Option<u64>,
    pub overtakes: Option<u64>,
    pub max_speed_mps: Option<f64>,
    pub min_distance_m: Option<f64>,
    /// Whether agent a yielded.
    pub yielded: Option<bool>,
    pub error_m: Option<f64>,
    pub rmse_m: Option<f64>,
    pub zeta: Option<f64>,
    pub tde_frames: Option<f64>,
    pub cluster_label: Option<String>,
    /// Reason the grid point produced no metrics.
    pub skipped: Option<String>,
}

impl MetricRecord {
    pub fn new(experiment: &str) -> Self {
        MetricRecord { experiment: experiment.to_string(), ..Default::default() }
    }

    /// Distances, speeds, errors and frame differences must be finite and >= 0.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fields = [
            ("max_speed_mps", self.max_speed_mps),
            ("min_distance_m", self.min_distance_m),
            ("error_m", self.error_m),
            ("rmse_m", self.rmse_m),
            ("tde_frames", self.tde_frames),
        ];
        for (name, v) in fields {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(ExperimentError::InvalidRecord(format!("{name} = {v}")));
                }
            }
        }
        for (name, v) in [("theta_a", self.theta_a), ("theta_b", self.theta_b), ("zeta", self.zeta)] {
            if v.is_some_and(|v| !v.is_finite()) {
                return Err(ExperimentError::InvalidRecord(format!("{name} is not finite")));
            }
        }
        // An empty CSV cell reads back as `None`.
        for (name, v) in [("cluster_label", &self.cluster_label), ("skipped", &self.skipped)] {
            if v.as_deref() == Some("") {
                return Err(ExperimentError::InvalidRecord(format!("{name} is empty")));
            }
        }
        Ok(())
    }
}

/// CSV column order, the field order of [`MetricRecord`].
pub const RECORD_COLUMNS: [&str; 16] = [
    "experiment",
    "theta_a",
    "theta_b",
    "seed",
    "agent_id",
    "lane_change_count",
    "overtakes",
    "max_speed_mps",
    "min_distance_m",
    "yielded",
    "error_m",
    "rmse_m",
    "zeta",
    "tde_frames",
    "cluster_label",
    "skipped",
];

pub fn write_csv<W: Write>(records: &[MetricRecord], writer: W) -> Result<(), ExperimentError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<MetricRecord>, ExperimentError> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<Result<Vec<MetricRecord>, _>>()?)
}

pub fn to_json(records: &[MetricRecord]) -> String {
    serde_json::to_string_pretty(records).expect("records serialize")
}

pub fn from_json(text: &str) -> Result<Vec<MetricRecord>, ExperimentError> {
    Ok(serde_json::from_str(text)?)
}
