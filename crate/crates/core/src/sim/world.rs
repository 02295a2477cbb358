use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::idm::{bumper_gap, idm_acceleration};
use super::mobil::{is_change_safe, mobil_decide, LaneDecision, LaneNeighbors, Neighbor, Neighborhood, Side};
use super::params::{
    DriverParams, ScenarioConfig, ScenarioKind, SimConfigFile, VehicleClass, AGGRESSIVE_V0, CONSERVATIVE_V0,
    CONSERVATIVE_V0_JITTER, VEHICLE_LENGTH,
};
use super::trajectory::TrajectoryRow;
use super::{SimError, VehicleState};

/// Upper bound on any commanded acceleration (m/s²).
pub const ACCEL_MAX: f64 = 5.0;
/// Bumper gaps below this (m) are logged as near collisions.
pub const NEAR_COLLISION_GAP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub n_lanes: usize,
    pub lane_width: f64,
    /// End of lane 0 in merge scenarios.
    pub merge_end: Option<f64>,
}

impl Road {
    pub fn lane_center(&self, lane: usize) -> f64 {
        lane as f64 * self.lane_width
    }

    pub fn adjacent(&self, lane: usize, side: Side) -> Option<usize> {
        match side {
            Side::Left if lane + 1 < self.n_lanes => Some(lane + 1),
            Side::Right if lane > 0 => Some(lane - 1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LateralManeuver {
    pub from_y: f64,
    pub to_y: f64,
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub state: VehicleState,
    pub params: DriverParams,
    pub maneuver: Option<LateralManeuver>,
}

impl Vehicle {
    pub fn new(state: VehicleState, params: DriverParams) -> Self {
        Vehicle { state, params, maneuver: None }
    }
}

/// Longitudinal command for an externally controlled vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum AccelCommand {
    /// Follow the vehicle's own IDM.
    #[default]
    Idm,
    /// IDM plus an offset (m/s²).
    Offset(f64),
    /// Commanded acceleration (m/s²).
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ExternalControl {
    pub accel: AccelCommand,
    /// Lane change request, executed only if the MOBIL safety criterion holds.
    pub lane_request: Option<Side>,
}

pub type Controls = BTreeMap<u32, ExternalControl>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEvent {
    LaneChange { id: u32, from: usize, to: usize },
    RejectedUnsafe { id: u32, side: Side },
    RejectedNoLane { id: u32, side: Side },
    CollisionImminent { id: u32 },
    NearCollision { follower: u32, leader: u32, gap: f64 },
    Collision { follower: u32, leader: u32 },
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub world: World,
    pub events: Vec<SimEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub tick: u64,
    pub time: f64,
    pub dt: f64,
    pub lane_change_duration: f64,
    pub road: Road,
    /// Sorted by id.
    pub vehicles: Vec<Vehicle>,
}

impl World {
    pub fn new(road: Road, dt: f64, lane_change_duration: f64, mut vehicles: Vec<Vehicle>) -> Self {
        vehicles.sort_by_key(|v| v.state.id);
        World { tick: 0, time: 0.0, dt, lane_change_duration, road, vehicles }
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.vehicles.binary_search_by_key(&id, |v| v.state.id).ok()
    }

    pub fn vehicle(&self, id: u32) -> Option<&Vehicle> {
        self.index_of(id).map(|i| &self.vehicles[i])
    }

    pub fn vehicle_mut(&mut self, id: u32) -> Option<&mut Vehicle> {
        self.index_of(id).map(move |i| &mut self.vehicles[i])
    }

    /// Vehicle indices per lane, sorted by (x, id).
    fn lane_order(&self) -> Vec<Vec<usize>> {
        let mut lanes = vec![Vec::new(); self.road.n_lanes];
        for (i, v) in self.vehicles.iter().enumerate() {
            lanes[v.state.lane].push(i);
        }
        for lane in &mut lanes {
            lane.sort_by(|&a, &b| {
                let (sa, sb) = (&self.vehicles[a].state, &self.vehicles[b].state);
                sa.x.total_cmp(&sb.x).then(sa.id.cmp(&sb.id))
            });
        }
        lanes
    }

    fn merge_obstacle(&self, lane: usize, x: f64) -> Option<Neighbor> {
        match self.road.merge_end {
            Some(end) if lane == 0 && x < end => Some(Neighbor {
                state: VehicleState {
                    id: u32::MAX,
                    x: end + VEHICLE_LENGTH,
                    y: 0.0,
                    lane: 0,
                    v: 0.0,
                    heading: 0.0,
                    class: VehicleClass::Conservative,
                },
                params: DriverParams::conservative(),
            }),
            _ => None,
        }
    }

    fn lane_neighbors(&self, order: &[Vec<usize>], lane: usize, ego: &VehicleState) -> LaneNeighbors {
        let key = |s: &VehicleState| (s.x, s.id);
        let ego_key = key(ego);
        let mut leader: Option<Neighbor> = None;
        let mut follower: Option<Neighbor> = None;
        for &i in &order[lane] {
            let v = &self.vehicles[i];
            if v.state.id == ego.id {
                continue;
            }
            let k = key(&v.state);
            let ahead = k.0 > ego_key.0 || (k.0 == ego_key.0 && k.1 > ego_key.1);
            let n = Neighbor { state: v.state, params: v.params };
            if ahead {
                if leader.is_none() {
                    leader = Some(n);
                }
            } else {
                follower = Some(n);
            }
        }
        if let Some(obstacle) = self.merge_obstacle(lane, ego.x) {
            if leader.is_none_or(|l| l.state.x > obstacle.state.x) {
                leader = Some(obstacle);
            }
        }
        LaneNeighbors { leader, follower }
    }

    fn neighborhood_with(&self, order: &[Vec<usize>], idx: usize) -> Neighborhood {
        let ego = &self.vehicles[idx].state;
        let side = |s: Side| self.road.adjacent(ego.lane, s).map(|lane| self.lane_neighbors(order, lane, ego));
        Neighborhood {
            current: self.lane_neighbors(order, ego.lane, ego),
            left: side(Side::Left),
            right: side(Side::Right),
        }
    }

    /// Surroundings of the vehicle at index `idx`.
    pub fn neighborhood(&self, idx: usize) -> Neighborhood {
        self.neighborhood_with(&self.lane_order(), idx)
    }

    /// Trajectory rows for the current tick, one per vehicle in id order.
    pub fn rows(&self) -> Vec<TrajectoryRow> {
        self.vehicles
            .iter()
            .map(|v| TrajectoryRow {
                frame: self.tick,
                time_s: self.time,
                agent_id: v.state.id,
                lane: v.state.lane,
                x_m: v.state.x,
                y_m: v.state.y,
                speed_mps: v.state.v,
                class: v.state.class,
            })
            .collect()
    }

    pub fn advance(&mut self, controls: &Controls) -> Vec<SimEvent> {
        let out = step(self, controls);
        *self = out.world;
        out.events
    }
}

/// Advances the world by one tick of `world.dt`.
///
/// Accelerations and lane decisions are computed from the snapshot at the
/// start of the tick; velocities are updated before positions.
pub fn step(world: &World, controls: &Controls) -> StepOutput {
    let order = world.lane_order();
    let mut events = Vec::new();
    let n = world.vehicles.len();
    let mut accels = vec![0.0; n];
    let mut lane_moves: Vec<Option<usize>> = vec![None; n];

    for (i, vehicle) in world.vehicles.iter().enumerate() {
        let state = &vehicle.state;
        let hood = world.neighborhood_with(&order, i);
        let leader = hood.current.leader.as_ref().map(|l| &l.state);
        let floor = vehicle.params.emergency_floor();
        let mut idm = idm_acceleration(state, &vehicle.params, leader);
        if idm.collision_imminent {
            events.push(SimEvent::CollisionImminent { id: state.id });
        }
        // Applied braking never exceeds the emergency floor.
        idm.value = idm.value.max(floor);

        if state.class == VehicleClass::External {
            let control = controls.get(&state.id).copied().unwrap_or_default();
            accels[i] = match control.accel {
                AccelCommand::Idm => idm.value,
                AccelCommand::Offset(offset) => (idm.value + offset).clamp(floor, ACCEL_MAX),
                AccelCommand::Absolute(a) => a.clamp(floor, ACCEL_MAX),
            };
            if let Some(side) = control.lane_request {
                match world.road.adjacent(state.lane, side) {
                    None => events.push(SimEvent::RejectedNoLane { id: state.id, side }),
                    Some(_) if vehicle.maneuver.is_some() => {
                        events.push(SimEvent::RejectedUnsafe { id: state.id, side })
                    }
                    Some(target) => {
                        if is_change_safe(state, &vehicle.params, &hood, side) {
                            lane_moves[i] = Some(target);
                        } else {
                            events.push(SimEvent::RejectedUnsafe { id: state.id, side });
                        }
                    }
                }
            }
        } else {
            accels[i] = idm.value;
            if vehicle.maneuver.is_none() {
                let side = match mobil_decide(state, &vehicle.params, &hood) {
                    LaneDecision::Stay => None,
                    LaneDecision::ChangeLeft => Some(Side::Left),
                    LaneDecision::ChangeRight => Some(Side::Right),
                };
                lane_moves[i] = side.and_then(|s| world.road.adjacent(state.lane, s));
            }
        }
    }

    let dt = world.dt;
    let mut next = world.clone();
    next.tick += 1;
    next.time = world.time + dt;
    for (i, vehicle) in next.vehicles.iter_mut().enumerate() {
        let s = &mut vehicle.state;
        if let Some(target) = lane_moves[i] {
            events.push(SimEvent::LaneChange { id: s.id, from: s.lane, to: target });
            vehicle.maneuver =
                Some(LateralManeuver { from_y: s.y, to_y: world.road.lane_center(target), elapsed: 0.0 });
            s.lane = target;
        }
        s.v = (s.v + accels[i] * dt).max(0.0);
        s.x += s.v * dt;

        let prev_y = s.y;
        if let Some(m) = vehicle.maneuver.as_mut() {
            m.elapsed += dt;
            let frac = (m.elapsed / world.lane_change_duration).min(1.0);
            s.y = m.from_y + (m.to_y - m.from_y) * frac;
            // Tolerate accumulated rounding in `elapsed`.
            if frac >= 1.0 - 1e-9 {
                s.y = m.to_y;
                vehicle.maneuver = None;
            }
        }
        s.heading = ((s.y - prev_y) / dt).atan2(s.v.max(1e-9));
        if vehicle.maneuver.is_none() && s.y == world.road.lane_center(s.lane) {
            s.heading = 0.0;
        }
    }

    for lane in next.lane_order() {
        for pair in lane.windows(2) {
            let (f, l) = (&next.vehicles[pair[0]].state, &next.vehicles[pair[1]].state);
            let gap = bumper_gap(f, l);
            if gap <= 0.0 {
                events.push(SimEvent::Collision { follower: f.id, leader: l.id });
            } else if gap < NEAR_COLLISION_GAP {
                events.push(SimEvent::NearCollision { follower: f.id, leader: l.id, gap });
            }
        }
    }

    StepOutput { world: next, events }
}

/// Spawns a population using the default conservative and aggressive classes.
pub fn spawn_population(config: &ScenarioConfig) -> Result<World, SimError> {
    spawn_with(&SimConfigFile::with_scenario(config.clone()))
}

/// Spawns `n_vehicles` on distinct longitudinal slots, deterministically in
/// the seed. Conservative agents get `v0 = 25 m/s ± 10%`, aggressive `40 m/s`.
pub fn spawn_with(file: &SimConfigFile) -> Result<World, SimError> {
    file.validate()?;
    let cfg = &file.scenario;
    let merge_end = (cfg.scenario_kind == ScenarioKind::Merge).then_some(cfg.merge_x);

    let per_lane = cfg.slots_per_lane();
    let mut slots: Vec<(usize, usize)> = (0..cfg.n_lanes)
        .flat_map(|lane| (0..per_lane).map(move |k| (lane, k)))
        .filter(|&(lane, k)| match merge_end {
            Some(end) if lane == 0 => ((k + 1) as f64) * cfg.spawn_spacing < end,
            _ => true,
        })
        .collect();
    if cfg.n_vehicles > slots.len() {
        return Err(SimError::Capacity { requested: cfg.n_vehicles, capacity: slots.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    slots.shuffle(&mut rng);
    slots.truncate(cfg.n_vehicles);
    slots.sort();

    let n_aggressive = (cfg.class_mix * cfg.n_vehicles as f64).round() as usize;
    let mut ids: Vec<usize> = (0..cfg.n_vehicles).collect();
    ids.shuffle(&mut rng);
    let mut aggressive = vec![false; cfg.n_vehicles];
    for &i in ids.iter().take(n_aggressive) {
        aggressive[i] = true;
    }

    let jitter_span = (cfg.spawn_spacing - VEHICLE_LENGTH) / 2.0;
    let vehicles = slots
        .iter()
        .enumerate()
        .map(|(i, &(lane, k))| {
            let (class, params) = if aggressive[i] {
                (VehicleClass::Aggressive, file.aggressive.with_v0(AGGRESSIVE_V0))
            } else {
                let jitter = rng.random_range(-CONSERVATIVE_V0_JITTER..=CONSERVATIVE_V0_JITTER);
                (VehicleClass::Conservative, file.conservative.with_v0(CONSERVATIVE_V0 * (1.0 + jitter)))
            };
            let x = k as f64 * cfg.spawn_spacing + rng.random_range(0.0..jitter_span);
            let v = cfg.initial_speed.min(params.v0);
            Vehicle::new(VehicleState::new(i as u32, x, lane, cfg.lane_width, v, class), params)
        })
        .collect();

    let road = Road { n_lanes: cfg.n_lanes, lane_width: cfg.lane_width, merge_end };
    Ok(World::new(road, cfg.tick_dt, cfg.lane_change_duration, vehicles))
}
