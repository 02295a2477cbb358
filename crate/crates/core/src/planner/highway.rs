use std::collections::BTreeMap;

use log::warn;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{mean_path, GameBuilder};
use super::{PlannerConfig, PlannerError};
use crate::game::{solve_nash, NashSolution};
use crate::sim::{
    spawn_with, AccelCommand, Controls, DriverParams, ExternalControl, LaneNeighbors, Neighbor, Road, ScenarioConfig,
    SimConfigFile, SimEvent, Side, Trajectory, Vehicle, VehicleClass, VehicleState, World, VEHICLE_LENGTH,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateValue {
    pub lane: usize,
    /// Ego entropic value; `None` when the candidate game broke down.
    pub value: Option<f64>,
}

/// One planning step for the ego.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub control: ExternalControl,
    pub accel: f64,
    pub target_lane: usize,
    pub candidates: Vec<CandidateValue>,
    /// Every candidate broke down and the plan was re-solved risk-neutrally.
    pub fallback: bool,
}

/// Receding-horizon lane-choice planner for one ego vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighwayPlanner {
    pub config: PlannerConfig,
    pub ego_id: u32,
    pub theta: f64,
    /// Desired cruising speed (m/s).
    pub v_des: f64,
    last_lane: Option<usize>,
    last_change: Option<f64>,
}

struct Candidate {
    lane: usize,
    x0: DVector<f64>,
    solution: NashSolution,
}

fn lateral_speed(world: &World, v: &Vehicle) -> f64 {
    v.maneuver.map_or(0.0, |m| (m.to_y - m.from_y) / world.lane_change_duration)
}

impl HighwayPlanner {
    pub fn new(config: PlannerConfig, ego_id: u32, theta: f64, v_des: f64) -> Self {
        HighwayPlanner { config, ego_id, theta, v_des, last_lane: None, last_change: None }
    }

    /// Candidate lanes: the current lane, plus its neighbors when no lateral
    /// maneuver is in progress and the last change is old enough.
    fn candidate_lanes(&self, world: &World, ego: &Vehicle) -> Vec<(usize, Option<Side>)> {
        let mut lanes = vec![(ego.state.lane, None)];
        let cooled = self.last_change.is_none_or(|t| world.time - t >= self.config.lane_change_cooldown);
        if ego.maneuver.is_none() && cooled {
            for side in [Side::Left, Side::Right] {
                if let Some(lane) = world.road.adjacent(ego.state.lane, side) {
                    lanes.push((lane, Some(side)));
                }
            }
        }
        lanes
    }

    fn build_candidate(
        &self,
        world: &World,
        ego: &Vehicle,
        lane: usize,
        neighbors: &LaneNeighbors,
        thetas: &BTreeMap<u32, f64>,
        risk_neutral: bool,
    ) -> Result<Candidate, PlannerError> {
        let cfg = &self.config;
        let e = &ego.state;
        let changing = lane != e.lane || ego.maneuver.is_some();
        let leader = neighbors
            .leader
            .filter(|l| l.state.id != u32::MAX && l.state.x - e.x - VEHICLE_LENGTH < cfg.gap_range);
        let follower = neighbors
            .follower
            .filter(|f| lane != e.lane && e.x - f.state.x - VEHICLE_LENGTH < cfg.follower_range);
        let others: Vec<Neighbor> = leader.into_iter().chain(follower).collect();
        let theta_of = |id: u32| if risk_neutral { 0.0 } else { thetas.get(&id).copied().unwrap_or(0.0) };
        let mut theta = vec![if risk_neutral { 0.0 } else { self.theta }];
        theta.extend(others.iter().map(|o| theta_of(o.state.id)));

        let mut gb = GameBuilder::new(2, theta, cfg.horizon, cfg.dt);
        let mut x0 = DVector::zeros(gb.n_state());
        let mut set = |gb: &GameBuilder, k: usize, s: &VehicleState, vy: f64| {
            x0[gb.pos(k, 0)] = s.x - e.x;
            x0[gb.pos(k, 1)] = s.y;
            x0[gb.vel(k, 0)] = s.v;
            x0[gb.vel(k, 1)] = vy;
        };
        set(&gb, 0, e, lateral_speed(world, ego));
        for (k, o) in others.iter().enumerate() {
            let vy = world.vehicle(o.state.id).map_or(0.0, |v| lateral_speed(world, v));
            set(&gb, k + 1, &o.state, vy);
        }

        let tf = cfg.terminal_factor;
        let (px, py, vx, vy) = (gb.pos(0, 0), gb.pos(0, 1), gb.vel(0, 0), gb.vel(0, 1));
        gb.residual(0, &[(vx, 1.0)], self.v_des, cfg.w_speed, tf);
        gb.residual(0, &[(py, 1.0)], world.road.lane_center(lane), cfg.w_lateral, tf);
        gb.residual(0, &[(vy, 1.0)], 0.0, cfg.w_lateral_speed, tf);
        gb.control_weights(0, &[cfg.w_accel, cfg.w_steer]);
        let standstill = cfg.s0 + VEHICLE_LENGTH;
        for (k, o) in others.iter().enumerate() {
            let k = k + 1;
            let (okx, oky, okvx, okvy) = (gb.pos(k, 0), gb.pos(k, 1), gb.vel(k, 0), gb.vel(k, 1));
            gb.residual(k, &[(okvx, 1.0)], o.state.v, cfg.other_w_speed, tf);
            gb.residual(k, &[(oky, 1.0)], o.state.y, cfg.other_w_lateral, tf);
            gb.residual(k, &[(okvy, 1.0)], 0.0, cfg.w_lateral_speed, tf);
            gb.control_weights(k, &[cfg.other_w_accel, cfg.other_w_steer]);
            if o.state.x > e.x {
                gb.residual(0, &[(okx, 1.0), (px, -1.0), (vx, -cfg.time_headway)], standstill, cfg.w_gap, tf);
            } else {
                gb.residual(k, &[(px, 1.0), (okx, -1.0), (okvx, -cfg.time_headway)], standstill, cfg.other_w_gap, tf);
            }
        }

        let maneuver_steps = if changing { (world.lane_change_duration / cfg.dt).ceil() as usize } else { 0 };
        let noise = |gb: &mut GameBuilder, speeds: &dyn Fn(usize, usize) -> f64| {
            for t in 0..cfg.horizon {
                for k in 0..=others.len() {
                    gb.velocity_noise(t, k, 0, cfg.speed_noise_variance(speeds(t, k)));
                    let mut lat = cfg.lateral_noise * cfg.lateral_noise;
                    if k == 0 && t < maneuver_steps {
                        lat += cfg.lane_change_noise * cfg.lane_change_noise;
                    }
                    gb.velocity_noise(t, k, 1, lat);
                }
            }
        };

        // First pass with current speeds, second with the nominal plan's speeds.
        let vel: Vec<usize> = (0..=others.len()).map(|k| gb.vel(k, 0)).collect();
        let mut first = gb.clone();
        noise(&mut first, &|_, k| x0[vel[k]]);
        let game = first.build();
        let solution = solve_nash(&game)?;
        let speeds: Vec<DVector<f64>> = if solution.is_breakdown() { vec![x0.clone(); cfg.horizon] } else { mean_path(&game, &solution, &x0) };
        noise(&mut gb, &|t, k| speeds[t][vel[k]].max(0.0));
        let game = gb.build();
        let solution = solve_nash(&game)?;
        Ok(Candidate { lane, x0, solution })
    }

    fn evaluate(&self, world: &World, thetas: &BTreeMap<u32, f64>, risk_neutral: bool) -> Result<Vec<(Candidate, Option<Side>)>, PlannerError> {
        let idx = world.index_of(self.ego_id).ok_or(PlannerError::UnknownAgent(self.ego_id))?;
        let ego = &world.vehicles[idx];
        let hood = world.neighborhood(idx);
        self.candidate_lanes(world, ego)
            .into_iter()
            .filter_map(|(lane, side)| {
                let neighbors = match side {
                    None => Some(&hood.current),
                    Some(s) => hood.target(s),
                }?;
                Some(self.build_candidate(world, ego, lane, neighbors, thetas, risk_neutral).map(|c| (c, side)))
            })
            .collect()
    }

    /// Solves one game per candidate lane and returns the first ego control
    /// of the lane with the lowest entropic value.
    pub fn plan(&mut self, world: &World, thetas: &BTreeMap<u32, f64>) -> Result<Plan, PlannerError> {
        let lane = world.vehicle(self.ego_id).ok_or(PlannerError::UnknownAgent(self.ego_id))?.state.lane;
        if self.last_lane.is_some_and(|l| l != lane) {
            self.last_change = Some(world.time);
        }
        self.last_lane = Some(lane);
        let mut fallback = false;
        let mut candidates = self.evaluate(world, thetas, false)?;
        if candidates.iter().all(|(c, _)| c.solution.is_breakdown()) {
            warn!("all candidate games broke down for agent {} at theta {}; planning risk-neutrally", self.ego_id, self.theta);
            fallback = true;
            candidates = self.evaluate(world, thetas, true)?;
        }
        let values: Vec<Option<f64>> = candidates.iter().map(|(c, _)| c.solution.value(0, &c.x0).ok()).collect();

        // The current lane wins unless another lane is better by the margin.
        let mut best = 0;
        for (k, v) in values.iter().enumerate().skip(1) {
            let Some(v) = *v else { continue };
            let beats = match values[best] {
                None => true,
                Some(b) if best == 0 => v < b - self.config.switch_margin,
                Some(b) => v < b,
            };
            if beats {
                best = k;
            }
        }
        let (chosen, side) = &candidates[best];
        let accel = if chosen.solution.is_breakdown() { 0.0 } else { chosen.solution.controls(0, &chosen.x0)[0][0] };
        Ok(Plan {
            control: ExternalControl { accel: AccelCommand::Absolute(accel), lane_request: *side },
            accel,
            target_lane: chosen.lane,
            candidates: candidates.iter().zip(&values).map(|((c, _), &value)| CandidateValue { lane: c.lane, value }).collect(),
            fallback,
        })
    }
}

/// Highway episode with one planner-controlled ego inserted behind the
/// spawned traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HighwayEpisodeConfig {
    pub sim: SimConfigFile,
    pub planner: PlannerConfig,
    pub ego_v_des: f64,
    pub ego_lane: usize,
    pub ego_x: f64,
    pub ego_speed: f64,
    /// Planning period in simulation ticks.
    pub replan_every: usize,
}

impl Default for HighwayEpisodeConfig {
    fn default() -> Self {
        HighwayEpisodeConfig {
            sim: SimConfigFile::with_scenario(ScenarioConfig { class_mix: 0.0, ..ScenarioConfig::default() }),
            planner: PlannerConfig::default(),
            ego_v_des: 32.0,
            ego_lane: 1,
            ego_x: -40.0,
            ego_speed: 25.0,
            replan_every: 1,
        }
    }
}

impl HighwayEpisodeConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.sim.scenario.seed = seed;
        cfg
    }

    /// Spawns traffic and the ego; the ego takes the next free id.
    pub fn spawn(&self) -> Result<(World, u32), PlannerError> {
        let mut world = spawn_with(&self.sim)?;
        let ego_id = world.vehicles.len() as u32;
        let lane = self.ego_lane.min(world.road.n_lanes - 1);
        let params = DriverParams::conservative().with_v0(self.ego_v_des);
        let state = VehicleState::new(ego_id, self.ego_x, lane, world.road.lane_width, self.ego_speed, VehicleClass::External);
        world.vehicles.push(Vehicle::new(state, params));
        Ok((world, ego_id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub ego_id: u32,
    pub theta: f64,
    pub trajectory: Trajectory,
    /// `(tick, event)` pairs.
    pub events: Vec<(u64, SimEvent)>,
    pub lane_changes: usize,
    pub overtakes: usize,
    pub max_speed: f64,
    pub fallbacks: usize,
    pub collisions: usize,
}

/// Counts overtakes: the ego leaves the lane of its leader and later
/// passes that vehicle.
#[derive(Debug, Clone, Default)]
pub struct OvertakeTracker {
    /// Former leaders and the lane the ego shared with them.
    former_leaders: BTreeMap<u32, usize>,
    pub count: usize,
}

impl OvertakeTracker {
    pub fn observe(&mut self, before: &World, after: &World, ego_id: u32) {
        let (Some(e0), Some(e1)) = (before.vehicle(ego_id), after.vehicle(ego_id)) else { return };
        let leader = before
            .vehicles
            .iter()
            .filter(|o| o.state.id != ego_id && o.state.lane == e0.state.lane && o.state.x > e0.state.x)
            .min_by(|a, b| a.state.x.total_cmp(&b.state.x));
        if let Some(l) = leader {
            self.former_leaders.insert(l.state.id, e0.state.lane);
        }
        for v in &after.vehicles {
            let id = v.state.id;
            let (Some(&lane), Some(prev)) = (self.former_leaders.get(&id), before.vehicle(id)) else { continue };
            if prev.state.x >= e0.state.x && v.state.x < e1.state.x {
                self.former_leaders.remove(&id);
                if e1.state.lane != lane && v.state.lane != e1.state.lane {
                    self.count += 1;
                }
            }
        }
    }
}

/// Runs one episode with the ego planning at risk parameter `theta`; other
/// agents are attributed the thetas in `thetas` (default 0).
pub fn run_highway_episode(cfg: &HighwayEpisodeConfig, theta: f64, thetas: &BTreeMap<u32, f64>) -> Result<EpisodeResult, PlannerError> {
    let (world, ego_id) = cfg.spawn()?;
    let planner = HighwayPlanner::new(cfg.planner.clone(), ego_id, theta, cfg.ego_v_des);
    run_highway_world(world, planner, cfg.sim.scenario.n_ticks(), cfg.replan_every, thetas)
}

/// The ego behind a slow leader in the middle lane, with one vehicle in
/// each other lane. Positions and speeds are drawn per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OvertakeSceneConfig {
    pub planner: PlannerConfig,
    pub n_lanes: usize,
    pub lane_width: f64,
    pub tick_dt: f64,
    pub duration: f64,
    pub lane_change_duration: f64,
    pub ego_speed: f64,
    pub ego_v_des: f64,
    /// Leader bumper distance ahead of the ego (m) and cruising speed (m/s).
    pub leader_gap: (f64, f64),
    pub leader_speed: (f64, f64),
    /// Side vehicle offset from the ego (m) and cruising speed (m/s).
    pub side_offset: (f64, f64),
    pub side_speed: (f64, f64),
}

impl Default for OvertakeSceneConfig {
    fn default() -> Self {
        OvertakeSceneConfig {
            planner: PlannerConfig::default(),
            n_lanes: 3,
            lane_width: 4.0,
            tick_dt: 0.1,
            duration: 30.0,
            lane_change_duration: 1.0,
            ego_speed: 25.0,
            ego_v_des: 32.0,
            leader_gap: (30.0, 50.0),
            leader_speed: (18.0, 21.0),
            side_offset: (-40.0, 40.0),
            side_speed: (22.0, 26.0),
        }
    }
}

impl OvertakeSceneConfig {
    pub fn spawn(&self, seed: u64) -> Result<(World, u32), PlannerError> {
        if self.n_lanes < 2 {
            return Err(PlannerError::InvalidConfig("an overtaking scene needs at least two lanes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let ego_lane = self.n_lanes / 2;
        let base = DriverParams::conservative();
        // Scene traffic keeps its lanes.
        let keep = DriverParams { delta_a_th: f64::MAX, ..base };
        let car = |id: u32, x: f64, lane: usize, v: f64| {
            Vehicle::new(VehicleState::new(id, x, lane, self.lane_width, v, VehicleClass::Conservative), keep.with_v0(v))
        };
        let mut vehicles = Vec::new();
        let gap = draw(self.leader_gap);
        let v = draw(self.leader_speed);
        vehicles.push(car(0, gap + VEHICLE_LENGTH, ego_lane, v));
        for lane in (0..self.n_lanes).filter(|&l| l != ego_lane) {
            let (x, v) = (draw(self.side_offset), draw(self.side_speed));
            vehicles.push(car(vehicles.len() as u32, x, lane, v));
        }
        let ego_id = vehicles.len() as u32;
        let state = VehicleState::new(ego_id, 0.0, ego_lane, self.lane_width, self.ego_speed, VehicleClass::External);
        vehicles.push(Vehicle::new(state, base.with_v0(self.ego_v_des)));
        let road = Road { n_lanes: self.n_lanes, lane_width: self.lane_width, merge_end: None };
        Ok((World::new(road, self.tick_dt, self.lane_change_duration, vehicles), ego_id))
    }

    pub fn run(&self, seed: u64, theta: f64, thetas: &BTreeMap<u32, f64>) -> Result<EpisodeResult, PlannerError> {
        self.planner.validate()?;
        let (world, ego_id) = self.spawn(seed)?;
        let planner = HighwayPlanner::new(self.planner.clone(), ego_id, theta, self.ego_v_des);
        let n_ticks = (self.duration / self.tick_dt).round() as usize;
        run_highway_world(world, planner, n_ticks, 1, thetas)
    }
}

/// Runs `planner` for `n_ticks` in a prepared world that already contains
/// its ego as an external vehicle.
pub fn run_highway_world(
    mut world: World,
    mut planner: HighwayPlanner,
    n_ticks: usize,
    replan_every: usize,
    thetas: &BTreeMap<u32, f64>,
) -> Result<EpisodeResult, PlannerError> {
    let ego_id = planner.ego_id;
    let mut trajectory = Trajectory::default();
    trajectory.push_frame(world.rows());
    let mut events = Vec::new();
    let mut tracker = OvertakeTracker::default();
    let mut fallbacks = 0;
    let mut control = ExternalControl::default();
    let every = replan_every.max(1);
    for tick in 0..n_ticks {
        if tick % every == 0 {
            let plan = planner.plan(&world, thetas)?;
            fallbacks += plan.fallback as usize;
            control = plan.control;
        } else {
            control.lane_request = None;
        }
        let mut controls = Controls::new();
        controls.insert(ego_id, control);
        let before = world.clone();
        for e in world.advance(&controls) {
            events.push((world.tick, e));
        }
        tracker.observe(&before, &world, ego_id);
        trajectory.push_frame(world.rows());
    }
    let lane_changes = events.iter().filter(|(_, e)| matches!(e, SimEvent::LaneChange { id, .. } if *id == ego_id)).count();
    let collisions = events
        .iter()
        .filter(|(_, e)| matches!(e, SimEvent::Collision { follower, leader } if *follower == ego_id || *leader == ego_id))
        .count();
    let max_speed = trajectory.agent(ego_id).map(|r| r.speed_mps).fold(0.0, f64::max);
    let theta = planner.theta;
    Ok(EpisodeResult { ego_id, theta, trajectory, events, lane_changes, overtakes: tracker.count, max_speed, fallbacks, collisions })
}
