use nalgebra::{DMatrix, DVector};

use crate::game::{LQGame, NashSolution, Stage};

/// Builds a game of point-mass agents with `axes` double-integrator axes
/// each. Agent `k` owns the state block `[p_0.., v_0..]` and control `a_0..`.
#[derive(Debug, Clone)]
pub(crate) struct GameBuilder {
    axes: usize,
    agents: usize,
    dt: f64,
    horizon: usize,
    /// `[t][i]` for `t = 0..=horizon`; the last entry is the terminal cost.
    q: Vec<Vec<DMatrix<f64>>>,
    l: Vec<Vec<DVector<f64>>>,
    c: Vec<Vec<f64>>,
    r: Vec<DMatrix<f64>>,
    w: Vec<DMatrix<f64>>,
    theta: Vec<f64>,
}

impl GameBuilder {
    pub fn new(axes: usize, theta: Vec<f64>, horizon: usize, dt: f64) -> Self {
        let agents = theta.len();
        let n = 2 * axes * agents;
        GameBuilder {
            axes,
            agents,
            dt,
            horizon,
            q: vec![vec![DMatrix::zeros(n, n); agents]; horizon + 1],
            l: vec![vec![DVector::zeros(n); agents]; horizon + 1],
            c: vec![vec![0.0; agents]; horizon + 1],
            r: vec![DMatrix::identity(axes, axes); agents],
            w: vec![DMatrix::zeros(n, n); horizon],
            theta,
        }
    }

    pub fn n_state(&self) -> usize {
        2 * self.axes * self.agents
    }

    pub fn pos(&self, agent: usize, axis: usize) -> usize {
        2 * self.axes * agent + axis
    }

    pub fn vel(&self, agent: usize, axis: usize) -> usize {
        2 * self.axes * agent + self.axes + axis
    }

    /// Adds `½ weight (Σ coef·x[idx] − target)²` to `player`'s cost at step `t`.
    pub fn residual_at(&mut self, t: usize, player: usize, terms: &[(usize, f64)], target: f64, weight: f64) {
        if weight == 0.0 {
            return;
        }
        let n = self.n_state();
        let mut h = DVector::zeros(n);
        for &(idx, coef) in terms {
            h[idx] += coef;
        }
        self.q[t][player] += weight * &h * h.transpose();
        self.l[t][player] -= weight * target * &h;
        self.c[t][player] += 0.5 * weight * target * target;
    }

    /// Running residual over every stage, scaled by `terminal_factor` at the end.
    pub fn residual(&mut self, player: usize, terms: &[(usize, f64)], target: f64, weight: f64, terminal_factor: f64) {
        for t in 0..self.horizon {
            self.residual_at(t, player, terms, target, weight);
        }
        self.residual_at(self.horizon, player, terms, target, weight * terminal_factor);
    }

    pub fn control_weights(&mut self, player: usize, weights: &[f64]) {
        self.r[player] = DMatrix::from_diagonal(&DVector::from_column_slice(weights));
    }

    /// Velocity disturbance variance on one axis of one agent at step `t`.
    pub fn velocity_noise(&mut self, t: usize, agent: usize, axis: usize, variance: f64) {
        let i = self.vel(agent, axis);
        self.w[t][(i, i)] += variance;
    }

    pub fn build(&self) -> LQGame {
        let n = self.n_state();
        let (axes, dt) = (self.axes, self.dt);
        let mut a = DMatrix::identity(n, n);
        let mut b_full = DMatrix::zeros(n, self.agents * axes);
        for k in 0..self.agents {
            for ax in 0..axes {
                let (p, v) = (self.pos(k, ax), self.vel(k, ax));
                a[(p, v)] = dt;
                b_full[(p, k * axes + ax)] = 0.5 * dt * dt;
                b_full[(v, k * axes + ax)] = dt;
            }
        }
        let b: Vec<DMatrix<f64>> =
            (0..self.agents).map(|k| b_full.columns(k * axes, axes).into_owned()).collect();
        let r: Vec<Vec<DMatrix<f64>>> = (0..self.agents)
            .map(|i| {
                (0..self.agents)
                    .map(|j| if i == j { self.r[i].clone() } else { DMatrix::zeros(axes, axes) })
                    .collect()
            })
            .collect();
        let mut stages: Vec<Stage> = (0..self.horizon)
            .map(|t| Stage {
                a: a.clone(),
                b: b.clone(),
                w: self.w[t].clone(),
                q: self.q[t].clone(),
                l: self.l[t].clone(),
                r: r.clone(),
                c: self.c[t].clone(),
            })
            .collect();
        // The game has no terminal constant; it is folded into the last stage.
        if let Some(last) = stages.last_mut() {
            for (c, ct) in last.c.iter_mut().zip(&self.c[self.horizon]) {
                *c += ct;
            }
        }
        LQGame {
            stages,
            terminal_q: self.q[self.horizon].clone(),
            terminal_l: self.l[self.horizon].clone(),
            theta: self.theta.clone(),
        }
    }
}

/// Noise-free closed-loop trajectory of an equilibrium.
pub(crate) fn mean_path(game: &LQGame, solution: &NashSolution, x0: &DVector<f64>) -> Vec<DVector<f64>> {
    let mut x = x0.clone();
    let mut path = vec![x.clone()];
    for (t, stage) in game.stages.iter().enumerate() {
        let mut next = &stage.a * &x;
        for (b, u) in stage.b.iter().zip(solution.controls(t, &x)) {
            next += b * u;
        }
        x = next;
        path.push(x.clone());
    }
    path
}
