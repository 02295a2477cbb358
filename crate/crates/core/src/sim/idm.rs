//! Intelligent Driver Model longitudinal acceleration.

use super::params::{DriverParams, VEHICLE_LENGTH};
use super::VehicleState;

/// IDM output. `collision_imminent` is set when the bumper gap has closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmAccel {
    pub value: f64,
    pub collision_imminent: bool,
}

/// Desired dynamic gap `s*(v, Δv) = s0 + v·T + v·Δv / (2·sqrt(a·b))`.
pub fn desired_gap(params: &DriverParams, v: f64, approach_rate: f64) -> f64 {
    params.s0
        + v * params.time_headway
        + v * approach_rate / (2.0 * (params.a_max * params.b_comf).sqrt())
}

/// Acceleration from speed, bumper gap and approach rate (`v_ego - v_leader`).
///
/// `gap = None` means a free road. A non-positive gap returns
/// [`DriverParams::emergency_floor`] and flags the collision; positive gaps
/// return the raw formula, which the simulator bounds by the same floor.
pub fn idm_from_gap(params: &DriverParams, v: f64, gap: Option<(f64, f64)>) -> IdmAccel {
    let free = 1.0 - (v / params.v0).powi(4);
    match gap {
        None => IdmAccel { value: params.a_max * free, collision_imminent: false },
        Some((s, _)) if s <= 0.0 => IdmAccel { value: params.emergency_floor(), collision_imminent: true },
        Some((s, approach_rate)) => {
            let ratio = desired_gap(params, v, approach_rate) / s;
            let value = params.a_max * (free - ratio * ratio);
            IdmAccel { value, collision_imminent: false }
        }
    }
}

/// Bumper-to-bumper gap between a follower and its leader.
pub fn bumper_gap(follower: &VehicleState, leader: &VehicleState) -> f64 {
    leader.x - follower.x - VEHICLE_LENGTH
}

pub fn idm_acceleration(
    ego: &VehicleState,
    params: &DriverParams,
    leader: Option<&VehicleState>,
) -> IdmAccel {
    let gap = leader.map(|l| (bumper_gap(ego, l), ego.v - l.v));
    idm_from_gap(params, ego.v, gap)
}
