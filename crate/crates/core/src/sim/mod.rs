//! Fixed-timestep multi-lane highway simulation with IDM car following and
//! MOBIL lane changes.
//!
//! Vehicles move as longitudinal point masses along lane centers. A lane
//! change switches the discrete lane index immediately and interpolates the
//! lateral position over [`ScenarioConfig::lane_change_duration`].

mod idm;
mod mobil;
mod params;
mod trajectory;
mod world;

pub use idm::{bumper_gap, desired_gap, idm_acceleration, idm_from_gap, IdmAccel};
pub use mobil::{
    accepts, incentive_criterion, is_change_safe, lane_change_accels, mobil_decide, safety_criterion,
    LaneChangeAccels, LaneDecision, LaneNeighbors, Neighbor, Neighborhood, Side,
};
pub use params::{
    DriverParams, ScenarioConfig, ScenarioKind, SimConfigFile, VehicleClass, AGGRESSIVE_V0,
    CONSERVATIVE_V0, CONSERVATIVE_V0_JITTER, VEHICLE_LENGTH,
};
pub use trajectory::{Trajectory, TrajectoryRow, TRAJECTORY_HEADER};
pub use world::{
    spawn_population, spawn_with, step, AccelCommand, Controls, ExternalControl, LateralManeuver, Road,
    SimEvent, StepOutput, Vehicle, World, ACCEL_MAX, NEAR_COLLISION_GAP,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid driver parameters: {0}")]
    InvalidParams(String),
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("{requested} vehicles exceed road capacity of {capacity}")]
    Capacity { requested: usize, capacity: usize },
    #[error("trajectory i/o: {0}")]
    Io(String),
}

/// Kinematic state of one simulated agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    /// Longitudinal position (m).
    pub x: f64,
    /// Lateral position (m); lane `k` is centered at `k · lane_width`.
    pub y: f64,
    /// Lane index, 0 is the rightmost lane.
    pub lane: usize,
    /// Speed (m/s), never negative.
    pub v: f64,
    /// Heading (rad).
    pub heading: f64,
    pub class: VehicleClass,
}

impl VehicleState {
    /// A vehicle centered in `lane` and heading straight down the road.
    pub fn new(id: u32, x: f64, lane: usize, lane_width: f64, v: f64, class: VehicleClass) -> Self {
        VehicleState { id, x, y: lane as f64 * lane_width, lane, v, heading: 0.0, class }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}
