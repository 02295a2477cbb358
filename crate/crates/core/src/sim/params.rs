use serde::{Deserialize, Serialize};

use super::SimError;

/// Body length used for every vehicle when computing bumper-to-bumper gaps.
pub const VEHICLE_LENGTH: f64 = 5.0;

/// Desired speed of conservative agents before jitter.
pub const CONSERVATIVE_V0: f64 = 25.0;
/// Desired speed of aggressive agents.
pub const AGGRESSIVE_V0: f64 = 40.0;
/// Relative jitter applied uniformly to conservative desired speeds.
pub const CONSERVATIVE_V0_JITTER: f64 = 0.10;

/// Behavioral class of a simulated agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Conservative,
    Aggressive,
    /// Driven by a planner or a human instead of IDM/MOBIL.
    External,
}

impl VehicleClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Conservative => "conservative",
            VehicleClass::Aggressive => "aggressive",
            VehicleClass::External => "external",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conservative" => Some(VehicleClass::Conservative),
            "aggressive" => Some(VehicleClass::Aggressive),
            "external" => Some(VehicleClass::External),
            _ => None,
        }
    }
}

/// IDM longitudinal and MOBIL lane-change parameters of one driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverParams {
    /// Desired speed (m/s).
    pub v0: f64,
    /// Safety time gap (s).
    pub time_headway: f64,
    /// Minimum gap in congested traffic (m).
    pub s0: f64,
    /// Comfortable maximum acceleration (m/s²).
    pub a_max: f64,
    /// Comfortable deceleration, positive (m/s²).
    pub b_comf: f64,
    /// MOBIL politeness in [0, 1].
    pub politeness: f64,
    /// Maximum deceleration imposed on the new follower, positive (m/s²).
    pub b_safe: f64,
    /// Minimum acceleration gain required to change lanes (m/s²).
    pub delta_a_th: f64,
}

impl DriverParams {
    pub fn conservative() -> Self {
        DriverParams {
            v0: CONSERVATIVE_V0,
            time_headway: 1.5,
            s0: 2.0,
            a_max: 1.0,
            b_comf: 2.0,
            politeness: 0.5,
            b_safe: 4.0,
            delta_a_th: 0.2,
        }
    }

    pub fn aggressive() -> Self {
        DriverParams {
            v0: AGGRESSIVE_V0,
            time_headway: 0.8,
            s0: 1.0,
            a_max: 2.5,
            b_comf: 4.0,
            politeness: 0.0,
            b_safe: 6.0,
            delta_a_th: 0.1,
        }
    }

    pub fn with_v0(mut self, v0: f64) -> Self {
        self.v0 = v0;
        self
    }

    /// Deceleration returned when the gap to the leader has closed.
    pub fn emergency_floor(&self) -> f64 {
        -2.0 * self.b_comf
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("v0", self.v0),
            ("time_headway", self.time_headway),
            ("s0", self.s0),
            ("a_max", self.a_max),
            ("b_comf", self.b_comf),
            ("b_safe", self.b_safe),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::InvalidParams(format!("{name} must be > 0, got {value}")));
            }
        }
        if !(0.0..=1.0).contains(&self.politeness) {
            return Err(SimError::InvalidParams(format!(
                "politeness must lie in [0, 1], got {}",
                self.politeness
            )));
        }
        if !(self.delta_a_th.is_finite() && self.delta_a_th >= 0.0) {
            return Err(SimError::InvalidParams(format!(
                "delta_a_th must be >= 0, got {}",
                self.delta_a_th
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Highway,
    /// The rightmost lane ends at `merge_x`; its vehicles must merge left.
    Merge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_lanes: usize,
    pub n_vehicles: usize,
    /// Lane width (m).
    pub lane_width: f64,
    /// Simulation step (s).
    pub tick_dt: f64,
    /// Episode length (s).
    pub duration: f64,
    pub seed: u64,
    /// Fraction of aggressive agents.
    pub class_mix: f64,
    pub scenario_kind: ScenarioKind,
    /// Length of the road segment vehicles are spawned on (m).
    pub spawn_length: f64,
    /// Minimum longitudinal distance between spawned vehicles in one lane (m).
    pub spawn_spacing: f64,
    /// Initial speed of every spawned vehicle, capped by its own v0 (m/s).
    pub initial_speed: f64,
    /// End of the merge lane for `ScenarioKind::Merge` (m).
    pub merge_x: f64,
    /// Lateral interpolation time of a lane change (s).
    pub lane_change_duration: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_lanes: 3,
            n_vehicles: 12,
            lane_width: 4.0,
            tick_dt: 0.1,
            duration: 30.0,
            seed: 0,
            class_mix: 0.3,
            scenario_kind: ScenarioKind::Highway,
            spawn_length: 300.0,
            spawn_spacing: 25.0,
            initial_speed: 22.0,
            merge_x: 250.0,
            lane_change_duration: 1.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_lanes < 1 {
            return Err(SimError::InvalidConfig("n_lanes must be >= 1".into()));
        }
        if !(self.tick_dt.is_finite() && self.tick_dt > 0.0) {
            return Err(SimError::InvalidConfig(format!("tick_dt must be > 0, got {}", self.tick_dt)));
        }
        if !(0.0..=1.0).contains(&self.class_mix) {
            return Err(SimError::InvalidConfig(format!(
                "class_mix must lie in [0, 1], got {}",
                self.class_mix
            )));
        }
        if !(self.lane_width > 0.0 && self.spawn_length > 0.0 && self.spawn_spacing > VEHICLE_LENGTH) {
            return Err(SimError::InvalidConfig(
                "lane_width and spawn_length must be > 0 and spawn_spacing > vehicle length".into(),
            ));
        }
        if !(self.duration >= 0.0 && self.initial_speed >= 0.0 && self.lane_change_duration > 0.0) {
            return Err(SimError::InvalidConfig(
                "duration and initial_speed must be >= 0, lane_change_duration > 0".into(),
            ));
        }
        Ok(())
    }

    /// Longitudinal slots available per lane during spawning.
    pub fn slots_per_lane(&self) -> usize {
        (self.spawn_length / self.spawn_spacing).floor() as usize
    }

    pub fn capacity(&self) -> usize {
        self.slots_per_lane() * self.n_lanes
    }

    pub fn n_ticks(&self) -> usize {
        (self.duration / self.tick_dt).round() as usize
    }
}

/// Scenario file: the scenario section plus both driver classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfigFile {
    pub scenario: ScenarioConfig,
    pub conservative: DriverParams,
    pub aggressive: DriverParams,
}

impl Default for SimConfigFile {
    fn default() -> Self {
        Self::with_scenario(ScenarioConfig::default())
    }
}

impl SimConfigFile {
    pub fn with_scenario(scenario: ScenarioConfig) -> Self {
        SimConfigFile {
            scenario,
            conservative: DriverParams::conservative(),
            aggressive: DriverParams::aggressive(),
        }
    }

    /// Parses a TOML scenario file; missing sections fall back to defaults.
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(default)]
            scenario: ScenarioConfig,
            conservative: Option<DriverParams>,
            aggressive: Option<DriverParams>,
        }
        let raw: Raw = toml::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let file = SimConfigFile {
            scenario: raw.scenario,
            conservative: raw.conservative.unwrap_or_else(DriverParams::conservative),
            aggressive: raw.aggressive.unwrap_or_else(DriverParams::aggressive),
        };
        file.validate()?;
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.scenario.validate()?;
        self.conservative.validate()?;
        self.aggressive.validate()
    }

    pub fn params_for(&self, class: VehicleClass) -> DriverParams {
        match class {
            VehicleClass::Aggressive => self.aggressive,
            _ => self.conservative,
        }
    }
}
