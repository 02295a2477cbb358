//! Two agents on converging paths. Each path is parameterized by the signed
//! distance `s` to the merge point; the paths meet at `s = 0` and share a
//! lane afterwards. Both agents plan with the same code, each treating
//! itself as player 0, so relabeling the agents mirrors every outcome.

use log::warn;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{mean_path, GameBuilder};
use super::{PlannerConfig, PlannerError};
use crate::game::{solve_nash, LQGame, NashSolution};
use crate::sim::{ACCEL_MAX, VEHICLE_LENGTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub planner: PlannerConfig,
    /// Simulation step (s).
    pub tick_dt: f64,
    pub duration: f64,
    /// Lateral offset of each path per meter before the merge point.
    pub convergence_slope: f64,
    /// Initial distance to the merge point is drawn from this range (m).
    pub start_distance: (f64, f64),
    pub start_speed: (f64, f64),
    pub v_des: f64,
    pub w_merge_gap: f64,
    /// Gap costs apply once the leading agent is predicted within this
    /// distance of the merge point (m).
    pub merge_zone: f64,
    /// Hardest braking either agent applies (m/s², negative).
    pub max_brake: f64,
    /// Closing decelerations above this trigger the safety brake (m/s²).
    pub shield_decel: f64,
    /// Bumper gap the safety brake preserves (m).
    pub shield_gap: f64,
    /// The episode ends once both agents are this far past the merge point (m).
    pub exit_distance: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            planner: PlannerConfig { horizon: 20, speed_noise_gain: 0.004, ..PlannerConfig::default() },
            tick_dt: 0.1,
            duration: 25.0,
            convergence_slope: 0.2,
            start_distance: (68.0, 72.0),
            start_speed: (21.5, 22.5),
            v_des: 25.0,
            w_merge_gap: 0.5,
            merge_zone: 30.0,
            max_brake: -6.0,
            shield_decel: 2.0,
            shield_gap: 2.0,
            exit_distance: 40.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeInit {
    pub s: [f64; 2],
    pub v: [f64; 2],
}

impl MergeInit {
    /// The same situation with the agents' roles exchanged.
    pub fn mirrored(&self) -> Self {
        MergeInit { s: [self.s[1], self.s[0]], v: [self.v[1], self.v[0]] }
    }
}

/// Seeded initial conditions.
pub fn merge_initial(cfg: &MergeConfig, seed: u64) -> MergeInit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
    let s = [-draw(cfg.start_distance), -draw(cfg.start_distance)];
    let v = [draw(cfg.start_speed), draw(cfg.start_speed)];
    MergeInit { s, v }
}

/// An agent's own risk parameter and the one it attributes to the other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeAgent {
    pub theta: f64,
    pub other_theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeSample {
    pub time: f64,
    pub s: [f64; 2],
    pub v: [f64; 2],
    /// Whether each agent planned to pass first.
    pub plans_first: [bool; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeOutcome {
    pub min_distance: f64,
    /// Agent that crossed the merge point first.
    pub first: Option<usize>,
    /// The other agent: it crossed second or not at all.
    pub yielded: Option<usize>,
    pub samples: Vec<MergeSample>,
    pub fallbacks: usize,
}

impl MergeConfig {
    fn lateral_offset(&self, s: f64) -> f64 {
        self.convergence_slope * (-s).max(0.0)
    }

    /// Euclidean distance between the agents' reference points.
    pub fn distance(&self, s: [f64; 2]) -> f64 {
        (s[0] - s[1]).hypot(self.lateral_offset(s[0]) + self.lateral_offset(s[1]))
    }

    /// Planning game for one ordering hypothesis from the ego's view, with
    /// the noise linearized about its own mean path. `None` on breakdown.
    fn hypothesis_game(
        &self,
        me: (f64, f64),
        other: (f64, f64),
        theta: [f64; 2],
        me_first: bool,
    ) -> Result<Option<(LQGame, NashSolution)>, PlannerError> {
        let cfg = &self.planner;
        let mut gb = GameBuilder::new(1, theta.to_vec(), cfg.horizon, cfg.dt);
        let (p0, v0, p1, v1) = (gb.pos(0, 0), gb.vel(0, 0), gb.pos(1, 0), gb.vel(1, 0));
        let x0 = state_vector(me, other);
        let tf = cfg.terminal_factor;
        for k in 0..2 {
            gb.residual(k, &[(gb.vel(k, 0), 1.0)], self.v_des, cfg.w_speed, tf);
            gb.control_weights(k, &[cfg.w_accel]);
        }
        let (sign, follower_v) = if me_first { (1.0, other.1) } else { (-1.0, me.1) };
        let gap = cfg.s0 + VEHICLE_LENGTH + cfg.time_headway * follower_v;
        let target = gap.max(sign * (me.0 - other.0));
        for t in 0..=cfg.horizon {
            let ahead = (me.0 + me.1 * cfg.dt * t as f64).max(other.0 + other.1 * cfg.dt * t as f64);
            if ahead < -self.merge_zone {
                continue;
            }
            let w = if t == cfg.horizon { self.w_merge_gap * tf } else { self.w_merge_gap };
            for k in 0..2 {
                gb.residual_at(t, k, &[(p0, sign), (p1, -sign)], target, w);
            }
        }

        let noise = |gb: &mut GameBuilder, speed: &dyn Fn(usize, usize) -> f64| {
            for t in 0..cfg.horizon {
                for k in 0..2 {
                    gb.velocity_noise(t, k, 0, cfg.speed_noise_variance(speed(t, k)));
                }
            }
        };
        let mut first = gb.clone();
        noise(&mut first, &|_, k| [me.1, other.1][k]);
        let game = first.build();
        let sol = solve_nash(&game)?;
        if sol.is_breakdown() {
            return Ok(None);
        }
        let path = mean_path(&game, &sol, &x0);
        noise(&mut gb, &|t, k| path[t][[v0, v1][k]].max(0.0));
        let game = gb.build();
        let sol = solve_nash(&game)?;
        Ok((!sol.is_breakdown()).then_some((game, sol)))
    }

    /// Ego value and first control for one ordering hypothesis, or `None`
    /// on breakdown. `me_first` orders the ego ahead of the other.
    fn hypothesis(&self, me: (f64, f64), other: (f64, f64), theta: [f64; 2], me_first: bool) -> Result<Option<(f64, f64)>, PlannerError> {
        let x0 = state_vector(me, other);
        Ok(self
            .hypothesis_game(me, other, theta, me_first)?
            .and_then(|(_, sol)| sol.value(0, &x0).ok().map(|value| (value, sol.controls(0, &x0)[0][0]))))
    }

    /// Minimum distance over one planning horizon when agent 0 (risk
    /// neutral) plans while modeling agent 1 with `modeled_theta`, and agent 1
    /// acts on its true risk parameter `human_theta`. The agent farther along
    /// its path is ordered first.
    pub fn planned_min_distance(&self, init: MergeInit, human_theta: f64, modeled_theta: f64) -> Result<f64, PlannerError> {
        let (me, other) = ((init.s[0], init.v[0]), (init.s[1], init.v[1]));
        let me_first = init.s[0] > init.s[1];
        let solve = |theta: f64| {
            self.hypothesis_game(me, other, [0.0, theta], me_first)?
                .ok_or_else(|| PlannerError::InvalidConfig(format!("merge game broke down at theta {theta}")))
        };
        let (game, ego) = solve(modeled_theta)?;
        let (_, human) = solve(human_theta)?;
        let mut x = state_vector(me, other);
        let mut min = self.distance([x[0], x[2]]);
        for (t, stage) in game.stages.iter().enumerate() {
            let u = [ego.controls(t, &x)[0].clone(), human.controls(t, &x)[1].clone()];
            x = &stage.a * &x + &stage.b[0] * &u[0] + &stage.b[1] * &u[1];
            min = min.min(self.distance([x[0], x[2]]));
        }
        Ok(min)
    }

    /// Braking needed by agent `me` to match the other's speed before the
    /// bumper gap shrinks to `shield_gap`, once it trails inside the merge zone.
    fn shield(&self, state: &[(f64, f64); 2], me: usize) -> Option<f64> {
        let ((s, v), (so, vo)) = (state[me], state[1 - me]);
        if s >= so || s < -self.merge_zone {
            return None;
        }
        let closing = v - vo;
        if closing <= 0.0 {
            return None;
        }
        let room = (so - s - VEHICLE_LENGTH - self.shield_gap).max(0.1);
        let need = closing * closing / (2.0 * room);
        (need > self.shield_decel).then_some(-need)
    }

    /// Entropic values of agent `me` for passing first and second, `None`
    /// where the game breaks down. States are `(s, v)`.
    pub fn ordering_values(&self, me: (f64, f64), other: (f64, f64), theta: [f64; 2]) -> Result<[Option<f64>; 2], PlannerError> {
        Ok([
            self.hypothesis(me, other, theta, true)?.map(|v| v.0),
            self.hypothesis(me, other, theta, false)?.map(|v| v.0),
        ])
    }

    /// Chooses the cheaper ordering for agent `me` and returns its
    /// acceleration and whether it plans to pass first.
    fn decide(&self, state: &[(f64, f64); 2], me: usize, agent: MergeAgent, order: Option<usize>) -> Result<(f64, bool, bool), PlannerError> {
        let other = 1 - me;
        let options: Vec<bool> = match order {
            Some(first) => vec![first == me],
            None => vec![true, false],
        };
        let solve = |theta: [f64; 2]| -> Result<Vec<(bool, (f64, f64))>, PlannerError> {
            let mut out = Vec::new();
            for &h in &options {
                if let Some(v) = self.hypothesis(state[me], state[other], theta, h)? {
                    out.push((h, v));
                }
            }
            Ok(out)
        };
        let mut fallback = false;
        let mut solved = solve([agent.theta, agent.other_theta])?;
        if solved.is_empty() {
            warn!("merge hypotheses broke down for theta {}; planning risk-neutrally", agent.theta);
            fallback = true;
            solved = solve([0.0, 0.0])?;
        }
        let (first, (_, accel)) = solved
            .into_iter()
            .reduce(|a, b| if b.1 .0 < a.1 .0 { b } else { a })
            .ok_or(PlannerError::InvalidConfig("risk-neutral merge game broke down".into()))?;
        Ok((accel, first, fallback))
    }
}

fn state_vector(me: (f64, f64), other: (f64, f64)) -> DVector<f64> {
    DVector::from_vec(vec![me.0, me.1, other.0, other.1])
}

/// Simulates one merge. `agents[k]` drives path `k`.
pub fn run_merge(cfg: &MergeConfig, init: MergeInit, agents: [MergeAgent; 2]) -> Result<MergeOutcome, PlannerError> {
    cfg.planner.validate()?;
    let mut s = init.s;
    let mut v = init.v;
    let mut time = 0.0;
    let mut crossed: Vec<usize> = Vec::new();
    let mut samples = Vec::new();
    let mut min_distance = cfg.distance(s);
    let mut fallbacks = 0;
    let n_ticks = (cfg.duration / cfg.tick_dt).round() as usize;
    for _ in 0..n_ticks {
        let state = [(s[0], v[0]), (s[1], v[1])];
        let order = crossed.first().copied();
        let mut accel = [0.0; 2];
        let mut plans_first = [false; 2];
        for k in 0..2 {
            let (mut a, first, fb) = cfg.decide(&state, k, agents[k], order)?;
            if let Some(brake) = cfg.shield(&state, k) {
                a = a.min(brake);
            }
            accel[k] = a.clamp(cfg.max_brake, ACCEL_MAX);
            plans_first[k] = first;
            fallbacks += fb as usize;
        }
        samples.push(MergeSample { time, s, v, plans_first });
        for k in 0..2 {
            v[k] = (v[k] + accel[k] * cfg.tick_dt).max(0.0);
            s[k] += v[k] * cfg.tick_dt;
        }
        time += cfg.tick_dt;
        let mut new: Vec<usize> = (0..2).filter(|k| s[*k] >= 0.0 && !crossed.contains(k)).collect();
        // Simultaneous crossings are ordered by progress; exact ties stay unordered.
        if new.len() == 2 && s[0] != s[1] {
            new.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        }
        if !(new.len() == 2 && s[0] == s[1]) {
            crossed.extend(new);
        }
        min_distance = min_distance.min(cfg.distance(s));
        if s.iter().all(|&x| x >= cfg.exit_distance) {
            break;
        }
    }
    samples.push(MergeSample { time, s, v, plans_first: samples.last().map_or([false; 2], |m| m.plans_first) });
    let first = crossed.first().copied();
    let yielded = first.map(|f| 1 - f);
    Ok(MergeOutcome { min_distance, first, yielded, samples, fallbacks })
}
