use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use riskdrive_core::behavior::{behavior_profile, BehaviorProfile};
use riskdrive_core::calibration::{map_to_theta, RiskClusters, RiskLabel, RiskMapping, THETA_BOUNDS};
use riskdrive_core::graph::{GraphHistory, DEFAULT_MU};
use riskdrive_core::planner::{HighwayPlanner, PlannerConfig};
use riskdrive_core::sim::{
    spawn_with, AccelCommand, Controls, DriverParams, ExternalControl, ScenarioConfig, Side, SimConfigFile, SimEvent,
    Trajectory, Vehicle, VehicleClass, VehicleState, World,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TICK_HZ: f64 = 15.0;
/// Reset capacity of the session graph history; offline recomputation must
/// use the same value.
pub const HISTORY_CAPACITY: usize = 4096;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("session {0} is stopped")]
    Stopped(u64),
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Keyboard action of the human driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accelerate,
    Brake,
    LaneLeft,
    LaneRight,
}

impl Action {
    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
    }

    fn is_lateral(self) -> bool {
        matches!(self, Action::LaneLeft | Action::LaneRight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlInput {
    pub action: Action,
    pub seq: u64,
}

/// The mapping fitted by the default `kmeans_fit` experiment.
fn default_mapping() -> RiskMapping {
    RiskMapping { beta0: 22.908, beta1: -1517.75, bounds: THETA_BOUNDS, training_pairs: Vec::new() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Background traffic. The tick step is replaced by `tick_dt` and the
    /// seed by `seed`.
    pub sim: SimConfigFile,
    pub seed: u64,
    pub tick_dt: f64,
    /// Length of the behavior window (s).
    pub window_s: f64,
    /// Period of the ζ/θ/cluster refresh (s).
    pub refresh_s: f64,
    /// Acceleration offset of accelerate/brake (m/s²).
    pub control_accel: f64,
    pub human_lane: usize,
    pub human_x: f64,
    pub human_speed: f64,
    pub human_v0: f64,
    pub ego_lane: usize,
    pub ego_x: f64,
    pub ego_speed: f64,
    pub ego_v_des: f64,
    pub ego_theta: f64,
    pub planner: PlannerConfig,
    /// Ego replanning period in ticks.
    pub replan_every: usize,
    pub mu: f64,
    pub mapping: RiskMapping,
    /// Cluster centroids in θ, ordered from most averse to most seeking
    /// (defaults from the `kmeans_fit` experiment).
    pub centroids: Vec<f64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            sim: SimConfigFile::with_scenario(ScenarioConfig::default()),
            seed: 0,
            tick_dt: 1.0 / TICK_HZ,
            window_s: 5.0,
            refresh_s: 1.0,
            control_accel: 2.0,
            human_lane: 1,
            human_x: -40.0,
            human_speed: 25.0,
            human_v0: 30.0,
            ego_lane: 1,
            ego_x: -80.0,
            ego_speed: 25.0,
            ego_v_des: 30.0,
            ego_theta: 0.0,
            planner: PlannerConfig::default(),
            replan_every: 15,
            mu: DEFAULT_MU,
            mapping: default_mapping(),
            centroids: vec![4.826, 0.310, -3.198, -4.968],
        }
    }
}

impl SessionConfig {
    pub fn window_ticks(&self) -> usize {
        (self.window_s / self.tick_dt).round() as usize
    }

    pub fn refresh_ticks(&self) -> u64 {
        ((self.refresh_s / self.tick_dt).round() as u64).max(1)
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::InvalidConfig(m));
        if !(self.tick_dt.is_finite() && self.tick_dt > 0.0) {
            return bad(format!("tick_dt must be > 0, got {}", self.tick_dt));
        }
        if self.window_ticks() < 3 {
            return bad("window_s must span at least 3 ticks".into());
        }
        if !(self.refresh_s > 0.0 && self.control_accel >= 0.0 && self.mu > 0.0) {
            return bad("refresh_s and mu must be > 0, control_accel >= 0".into());
        }
        if self.centroids.len() != RiskLabel::ORDER.len() || self.centroids.windows(2).any(|w| w[0] <= w[1]) {
            return bad("centroids must be 4 strictly decreasing values".into());
        }
        if self.replan_every == 0 {
            return bad("replan_every must be >= 1".into());
        }
        let n_lanes = self.sim.scenario.n_lanes;
        if self.human_lane >= n_lanes || self.ego_lane >= n_lanes {
            return bad(format!("human and ego lanes must be < {n_lanes}"));
        }
        self.planner.validate().map_err(|e| SessionError::InvalidConfig(e.to_string()))
    }

    fn clusters(&self) -> RiskClusters {
        RiskClusters {
            k: self.centroids.len(),
            centroids: self.centroids.clone(),
            labels: RiskLabel::ORDER.to_vec(),
            assignments: Vec::new(),
            inertia: 0.0,
        }
    }
}

/// Behavior estimates of the human over the latest window. Empty until the
/// first refresh with a full enough window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LiveMetrics {
    pub zeta: Option<f64>,
    pub theta: Option<f64>,
    pub cluster: Option<RiskLabel>,
    /// Latest closeness SLE and SIE of the window.
    pub sle: Option<f64>,
    pub sie: Option<f64>,
    /// First and last frame of the window.
    pub window: Option<(u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleView {
    pub id: u32,
    pub lane: usize,
    pub x_m: f64,
    pub y_m: f64,
    pub speed_mps: f64,
    pub class: VehicleClass,
}

/// Result of one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub session: u64,
    pub tick: u64,
    pub sim_time_s: f64,
    pub vehicles: Vec<VehicleView>,
    pub metrics: LiveMetrics,
    pub events: Vec<SimEvent>,
    /// Sequence numbers of the controls applied on this tick.
    pub applied: Vec<u64>,
}

/// Files produced when a session stops.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionExport {
    pub session: u64,
    pub ticks: u64,
    pub trajectory_csv: String,
    /// Profile of the last refresh.
    pub profile: Option<BehaviorProfile>,
}

impl SessionExport {
    pub fn profile_json(&self) -> String {
        serde_json::to_string_pretty(&self.profile).expect("profile serializes")
    }

    /// Writes `session_<id>_trajectory.csv` and `session_<id>_profile.json`.
    pub fn write(&self, dir: &Path) -> Result<[PathBuf; 2], SessionError> {
        let io = |e: std::io::Error| SessionError::Io(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        let traj = dir.join(format!("session_{}_trajectory.csv", self.session));
        let prof = dir.join(format!("session_{}_profile.json", self.session));
        fs::write(&traj, &self.trajectory_csv).map_err(io)?;
        fs::write(&prof, self.profile_json()).map_err(io)?;
        Ok([traj, prof])
    }
}

/// One human driver, one planner-controlled ego and background traffic.
#[derive(Debug)]
pub struct Session {
    pub id: u64,
    pub config: SessionConfig,
    pub world: World,
    pub human_id: u32,
    pub ego_id: u32,
    planner: HighwayPlanner,
    ego_control: ExternalControl,
    queue: VecDeque<ControlInput>,
    trajectory: Trajectory,
    history: GraphHistory,
    clusters: RiskClusters,
    metrics: LiveMetrics,
    profile: Option<BehaviorProfile>,
    stopped: bool,
}

impl Session {
    pub fn new(id: u64, config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let mut sim = config.sim.clone();
        sim.scenario.seed = config.seed;
        sim.scenario.tick_dt = config.tick_dt;
        let mut world = spawn_with(&sim).map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        let human_id = world.vehicles.len() as u32;
        let ego_id = human_id + 1;
        let lane_width = world.road.lane_width;
        let human = VehicleState::new(human_id, config.human_x, config.human_lane, lane_width, config.human_speed, VehicleClass::External);
        let ego = VehicleState::new(ego_id, config.ego_x, config.ego_lane, lane_width, config.ego_speed, VehicleClass::External);
        world.vehicles.push(Vehicle::new(human, DriverParams::conservative().with_v0(config.human_v0)));
        world.vehicles.push(Vehicle::new(ego, DriverParams::conservative().with_v0(config.ego_v_des)));
        let planner = HighwayPlanner::new(config.planner.clone(), ego_id, config.ego_theta, config.ego_v_des);
        Ok(Session {
            id,
            history: GraphHistory::new(config.mu, HISTORY_CAPACITY),
            clusters: config.clusters(),
            config,
            world,
            human_id,
            ego_id,
            planner,
            ego_control: ExternalControl::default(),
            queue: VecDeque::new(),
            trajectory: Trajectory::default(),
            metrics: LiveMetrics::default(),
            profile: None,
            stopped: false,
        })
    }

    pub fn tick_count(&self) -> u64 {
        self.world.tick
    }

    pub fn metrics(&self) -> &LiveMetrics {
        &self.metrics
    }

    pub fn profile(&self) -> Option<&BehaviorProfile> {
        self.profile.as_ref()
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// Queues a control for the next ticks.
    pub fn push_control(&mut self, input: ControlInput) -> Result<(), SessionError> {
        if self.stopped {
            return Err(SessionError::Stopped(self.id));
        }
        self.queue.push_back(input);
        Ok(())
    }

    /// Takes queued controls in order, at most one longitudinal and one
    /// lateral, stopping at the first control of a kind already taken.
    fn take_controls(&mut self) -> (ExternalControl, Vec<u64>) {
        let mut control = ExternalControl::default();
        let (mut long, mut lat) = (false, false);
        let mut applied = Vec::new();
        while let Some(c) = self.queue.front().copied() {
            let taken = if c.action.is_lateral() { &mut lat } else { &mut long };
            if *taken {
                break;
            }
            *taken = true;
            self.queue.pop_front();
            applied.push(c.seq);
            match c.action {
                Action::Accelerate => control.accel = AccelCommand::Offset(self.config.control_accel),
                Action::Brake => control.accel = AccelCommand::Offset(-self.config.control_accel),
                Action::LaneLeft => control.lane_request = Some(Side::Left),
                Action::LaneRight => control.lane_request = Some(Side::Right),
            }
        }
        (control, applied)
    }

    pub fn tick(&mut self) -> Result<StateUpdate, SessionError> {
        if self.stopped {
            return Err(SessionError::Stopped(self.id));
        }
        let (human, applied) = self.take_controls();
        if self.world.tick % self.config.replan_every as u64 == 0 {
            let thetas: BTreeMap<u32, f64> = self.metrics.theta.map(|t| (self.human_id, t)).into_iter().collect();
            self.ego_control = match self.planner.plan(&self.world, &thetas) {
                Ok(plan) => plan.control,
                Err(e) => {
                    log::warn!("session {}: ego planning failed: {e}", self.id);
                    ExternalControl::default()
                }
            };
        } else {
            self.ego_control.lane_request = None;
        }
        let mut controls = Controls::new();
        controls.insert(self.human_id, human);
        controls.insert(self.ego_id, self.ego_control);
        let events = self.world.advance(&controls);

        let rows = self.world.rows();
        self.history
            .push_positions(self.world.tick, rows.iter().map(|r| r.agent_id).collect(), rows.iter().map(|r| [r.x_m, r.y_m]).collect())
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        self.trajectory.push_frame(rows.iter().copied());
        if self.world.tick % self.config.refresh_ticks() == 0 {
            self.refresh();
        }
        Ok(StateUpdate {
            session: self.id,
            tick: self.world.tick,
            sim_time_s: self.world.tick as f64 * self.config.tick_dt,
            vehicles: rows
                .iter()
                .map(|r| VehicleView { id: r.agent_id, lane: r.lane, x_m: r.x_m, y_m: r.y_m, speed_mps: r.speed_mps, class: r.class })
                .collect(),
            metrics: self.metrics.clone(),
            events,
            applied,
        })
    }

    /// Recomputes the human's profile over the latest window.
    fn refresh(&mut self) {
        let end = self.history.len();
        let start = end.saturating_sub(self.config.window_ticks());
        match behavior_profile(&self.history, self.human_id, start..end, self.config.tick_dt) {
            Ok(p) => {
                let theta = map_to_theta(&self.config.mapping, p.zeta).theta;
                self.metrics = LiveMetrics {
                    zeta: Some(p.zeta),
                    theta: Some(theta),
                    cluster: Some(self.clusters.classify(theta)),
                    sle: p.sle.closeness.last().copied(),
                    sie: p.sie.closeness.last().copied(),
                    window: Some(p.window),
                };
                self.profile = Some(p);
            }
            Err(e) => log::debug!("session {}: no profile yet: {e}", self.id),
        }
    }

    pub fn stop(&mut self) -> Result<SessionExport, SessionError> {
        if self.stopped {
            return Err(SessionError::Stopped(self.id));
        }
        self.stopped = true;
        Ok(SessionExport {
            session: self.id,
            ticks: self.world.tick,
            trajectory_csv: self.trajectory.to_csv_string(),
            profile: self.profile.clone(),
        })
    }
}

/// Running sessions, each behind its own lock.
#[derive(Debug, Default)]
pub struct SessionManager {
    sessions: Mutex<BTreeMap<u64, Arc<Mutex<Session>>>>,
    next_id: Mutex<u64>,
    out_dir: Option<PathBuf>,
}

impl SessionManager {
    /// Stopped sessions are exported into `out_dir` when one is given.
    pub fn new(out_dir: Option<PathBuf>) -> Self {
        SessionManager { out_dir, ..Default::default() }
    }

    pub fn start(&self, config: SessionConfig) -> Result<u64, SessionError> {
        let id = {
            let mut next = self.next_id.lock().unwrap();
            *next += 1;
            *next
        };
        let session = Session::new(id, config)?;
        self.sessions.lock().unwrap().insert(id, Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn get(&self, id: u64) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.sessions.lock().unwrap().get(&id).cloned().ok_or(SessionError::UnknownSession(id))
    }

    pub fn ids(&self) -> Vec<u64> {
        self.sessions.lock().unwrap().keys().copied().collect()
    }

    pub fn control(&self, id: u64, input: ControlInput) -> Result<(), SessionError> {
        self.get(id)?.lock().unwrap().push_control(input)
    }

    pub fn tick(&self, id: u64) -> Result<StateUpdate, SessionError> {
        self.get(id)?.lock().unwrap().tick()
    }

    /// Stops and removes a session; returns its export and the written
    /// file paths.
    pub fn stop(&self, id: u64) -> Result<(SessionExport, Option<[PathBuf; 2]>), SessionError> {
        let session = self.sessions.lock().unwrap().remove(&id).ok_or(SessionError::UnknownSession(id))?;
        let export = session.lock().unwrap().stop()?;
        let files = self.out_dir.as_deref().map(|d| export.write(d)).transpose()?;
        Ok((export, files))
    }
}
