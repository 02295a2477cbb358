//! MOBIL lane-change decisions.

use serde::{Deserialize, Serialize};

use super::idm::{bumper_gap, idm_acceleration};
use super::params::DriverParams;
use super::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneDecision {
    Stay,
    ChangeLeft,
    ChangeRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn decision(self) -> LaneDecision {
        match self {
            Side::Left => LaneDecision::ChangeLeft,
            Side::Right => LaneDecision::ChangeRight,
        }
    }
}

/// A surrounding vehicle together with the parameters it drives with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub state: VehicleState,
    pub params: DriverParams,
}

/// Leader and follower of one lane relative to the ego vehicle. `None` means
/// no vehicle, i.e. an infinite gap.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneNeighbors {
    pub leader: Option<Neighbor>,
    pub follower: Option<Neighbor>,
}

/// Surroundings seen by MOBIL. Adjacent lanes that do not exist are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Neighborhood {
    pub current: LaneNeighbors,
    pub left: Option<LaneNeighbors>,
    pub right: Option<LaneNeighbors>,
}

impl Neighborhood {
    pub fn target(&self, side: Side) -> Option<&LaneNeighbors> {
        match side {
            Side::Left => self.left.as_ref(),
            Side::Right => self.right.as_ref(),
        }
    }
}

/// Accelerations before (`a_*`) and after (`a_*_new`) a hypothetical change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChangeAccels {
    pub ego: f64,
    pub ego_new: f64,
    /// New follower in the target lane.
    pub new_follower: f64,
    pub new_follower_new: f64,
    /// Old follower in the current lane.
    pub old_follower: f64,
    pub old_follower_new: f64,
    /// Set when the ego body would overlap a target-lane vehicle.
    pub overlap: bool,
}

impl LaneChangeAccels {
    /// Deceleration imposed on the new follower.
    pub fn target_accel(&self) -> f64 {
        self.new_follower_new
    }

    pub fn ego_gain(&self) -> f64 {
        self.ego_new - self.ego
    }

    pub fn neighbor_gain(&self) -> f64 {
        self.new_follower_new - self.new_follower + self.old_follower_new - self.old_follower
    }
}

pub fn safety_criterion(accels: &LaneChangeAccels, params: &DriverParams) -> bool {
    !accels.overlap && accels.target_accel() >= -params.b_safe
}

pub fn incentive_criterion(accels: &LaneChangeAccels, params: &DriverParams) -> bool {
    accels.ego_gain() + params.politeness * accels.neighbor_gain() > params.delta_a_th
}

/// Both MOBIL criteria for one candidate lane.
pub fn accepts(accels: &LaneChangeAccels, params: &DriverParams) -> bool {
    safety_criterion(accels, params) && incentive_criterion(accels, params)
}

fn idm_of(n: &Neighbor, leader: Option<&VehicleState>) -> f64 {
    idm_acceleration(&n.state, &n.params, leader).value
}

/// Evaluates every acceleration MOBIL needs for a change into `target`.
///
/// `ego_params` is used for the ego's own IDM; each neighbor uses its own
/// parameters. A follower without a neighbor contributes zero to the sums.
pub fn lane_change_accels(
    ego: &VehicleState,
    ego_params: &DriverParams,
    current: &LaneNeighbors,
    target: &LaneNeighbors,
) -> LaneChangeAccels {
    let cur_leader = current.leader.as_ref().map(|n| &n.state);
    let tgt_leader = target.leader.as_ref().map(|n| &n.state);

    let ego_now = idm_acceleration(ego, ego_params, cur_leader).value;
    let ego_new = idm_acceleration(ego, ego_params, tgt_leader).value;

    let (new_follower, new_follower_new, follower_overlap) = match &target.follower {
        Some(f) => (idm_of(f, tgt_leader), idm_of(f, Some(ego)), bumper_gap(&f.state, ego) <= 0.0),
        None => (0.0, 0.0, false),
    };
    let (old_follower, old_follower_new) = match &current.follower {
        Some(f) => (idm_of(f, Some(ego)), idm_of(f, cur_leader)),
        None => (0.0, 0.0),
    };
    let leader_overlap = tgt_leader.is_some_and(|l| bumper_gap(ego, l) <= 0.0);

    LaneChangeAccels {
        ego: ego_now,
        ego_new,
        new_follower,
        new_follower_new,
        old_follower,
        old_follower_new,
        overlap: follower_overlap || leader_overlap,
    }
}

/// MOBIL decision. The left lane is evaluated first and wins ties.
pub fn mobil_decide(ego: &VehicleState, params: &DriverParams, hood: &Neighborhood) -> LaneDecision {
    for side in [Side::Left, Side::Right] {
        if let Some(target) = hood.target(side) {
            let accels = lane_change_accels(ego, params, &hood.current, target);
            if accepts(&accels, params) {
                return side.decision();
            }
        }
    }
    LaneDecision::Stay
}

/// Safety-only gate used for externally requested lane changes.
pub fn is_change_safe(ego: &VehicleState, params: &DriverParams, hood: &Neighborhood, side: Side) -> bool {
    match hood.target(side) {
        Some(target) => safety_criterion(&lane_change_accels(ego, params, &hood.current, target), params),
        None => false,
    }
}
