//! Receding-horizon planners built on the risk-sensitive LQ game.
//!
//! Every agent is a point mass with state `[p_x, p_y, v_x, v_y]` (or
//! `[s, v]` along a path for merging) and acceleration inputs. Process noise
//! enters the velocities and grows with speed and during lane changes, so an
//! agent's risk parameter changes which maneuver it prefers.

mod highway;
mod merge;
mod model;

pub use highway::{
    run_highway_episode, run_highway_world, CandidateValue, EpisodeResult, HighwayEpisodeConfig, HighwayPlanner, OvertakeSceneConfig, OvertakeTracker, Plan,
};
pub use merge::{merge_initial, run_merge, MergeAgent, MergeConfig, MergeInit, MergeOutcome, MergeSample};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::GameError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("agent {0} is not in the world")]
    UnknownAgent(u32),
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
}

/// Cost weights, noise model and horizon of the planning games. Weights
/// multiply `½ e²` for a residual `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Planning step (s).
    pub dt: f64,
    pub horizon: usize,
    pub w_speed: f64,
    pub w_lateral: f64,
    pub w_lateral_speed: f64,
    pub w_gap: f64,
    pub w_accel: f64,
    pub w_steer: f64,
    pub other_w_speed: f64,
    pub other_w_lateral: f64,
    pub other_w_gap: f64,
    pub other_w_accel: f64,
    pub other_w_steer: f64,
    pub terminal_factor: f64,
    /// Desired time headway (s) and standstill gap (m) in gap residuals.
    pub time_headway: f64,
    pub s0: f64,
    /// Leaders farther than this bumper gap (m) are ignored.
    pub gap_range: f64,
    /// Target-lane followers farther than this (m) are ignored.
    pub follower_range: f64,
    /// Velocity noise std per step: `speed_noise + speed_noise_gain · v` (m/s).
    pub speed_noise: f64,
    pub speed_noise_gain: f64,
    /// Lateral velocity noise std per step (m/s).
    pub lateral_noise: f64,
    /// Extra lateral noise std while changing lanes (m/s).
    pub lane_change_noise: f64,
    /// Value improvement required to leave the current lane.
    pub switch_margin: f64,
    /// Minimum time between two lane changes (s).
    pub lane_change_cooldown: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            dt: 0.25,
            horizon: 12,
            w_speed: 1.0,
            w_lateral: 1.0,
            w_lateral_speed: 1.0,
            w_gap: 0.5,
            w_accel: 1.0,
            w_steer: 1.0,
            other_w_speed: 1.0,
            other_w_lateral: 4.0,
            other_w_gap: 0.5,
            other_w_accel: 2.0,
            other_w_steer: 4.0,
            terminal_factor: 2.0,
            time_headway: 1.5,
            s0: 2.0,
            gap_range: 60.0,
            follower_range: 40.0,
            speed_noise: 0.02,
            speed_noise_gain: 0.001,
            lateral_noise: 0.02,
            lane_change_noise: 0.3,
            switch_margin: 1.0,
            lane_change_cooldown: 3.0,
        }
    }
}

impl PlannerConfig {
    pub fn speed_noise_variance(&self, v: f64) -> f64 {
        let s = self.speed_noise + self.speed_noise_gain * v;
        s * s
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if !(self.dt.is_finite() && self.dt > 0.0) || self.horizon == 0 {
            return Err(PlannerError::InvalidConfig("dt must be > 0 and horizon >= 1".into()));
        }
        let weights = [
            self.w_speed,
            self.w_lateral,
            self.w_lateral_speed,
            self.w_gap,
            self.other_w_speed,
            self.other_w_lateral,
            self.other_w_gap,
            self.terminal_factor,
            self.speed_noise,
            self.speed_noise_gain,
            self.lateral_noise,
            self.lane_change_noise,
            self.switch_margin,
            self.lane_change_cooldown,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(PlannerError::InvalidConfig("weights and noise levels must be finite and >= 0".into()));
        }
        let efforts = [self.w_accel, self.w_steer, self.other_w_accel, self.other_w_steer];
        if efforts.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(PlannerError::InvalidConfig("control weights must be > 0".into()));
        }
        Ok(())
    }
}
