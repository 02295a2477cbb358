use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::params::VehicleClass;
use super::SimError;

pub const TRAJECTORY_HEADER: &str = "frame,time_s,agent_id,lane,x_m,y_m,speed_mps,class";

/// One agent at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub frame: u64,
    pub time_s: f64,
    pub agent_id: u32,
    pub lane: usize,
    pub x_m: f64,
    pub y_m: f64,
    pub speed_mps: f64,
    pub class: VehicleClass,
}

/// Per-tick trajectory export, rows ordered by (frame, agent_id).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn push_frame(&mut self, rows: impl IntoIterator<Item = TrajectoryRow>) {
        self.rows.extend(rows);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows grouped by frame, in frame order.
    pub fn frames(&self) -> Vec<(u64, Vec<TrajectoryRow>)> {
        let mut out: Vec<(u64, Vec<TrajectoryRow>)> = Vec::new();
        for row in &self.rows {
            match out.last_mut() {
                Some((f, rows)) if *f == row.frame => rows.push(*row),
                _ => out.push((row.frame, vec![*row])),
            }
        }
        out
    }

    pub fn agent(&self, id: u32) -> impl Iterator<Item = &TrajectoryRow> {
        self.rows.iter().filter(move |r| r.agent_id == id)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(TRAJECTORY_HEADER.split(','))
            .map_err(|e| SimError::Io(e.to_string()))?;
        for row in &self.rows {
            w.serialize(row).map_err(|e| SimError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| SimError::Io(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SimError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r.headers().map_err(|e| SimError::Io(e.to_string()))?.clone();
        if !header.is_empty() && header.iter().collect::<Vec<_>>().join(",") != TRAJECTORY_HEADER {
            return Err(SimError::Io(format!("unexpected trajectory header: {:?}", header)));
        }
        let rows = r
            .deserialize()
            .enumerate()
            .map(|(i, row)| row.map_err(|e| SimError::Io(format!("row {}: {e}", i + 2))))
            .collect::<Result<Vec<TrajectoryRow>, _>>()?;
        Ok(Trajectory { rows })
    }
}
