use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{entropic_risk, psd_sqrt, GameError, LQGame, NashSolution, Policy};

/// Closed-loop samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollouts {
    /// `states[s][t]` for `t = 0..=T`.
    pub states: Vec<Vec<DVector<f64>>>,
    /// `costs[i][s]`: realized cost of player `i` in sample `s`.
    pub costs: Vec<Vec<f64>>,
    /// Empirical entropic risk per player.
    pub risk: Vec<f64>,
}

/// Samples the equilibrium closed loop from `x0`.
pub fn rollout(game: &LQGame, solution: &NashSolution, x0: &DVector<f64>, noise_seed: u64, n_samples: usize) -> Result<Rollouts, GameError> {
    solution.ensure_ok()?;
    rollout_policies(game, &solution.policies, x0, noise_seed, n_samples)
}

/// Samples the closed loop of an arbitrary affine policy profile. Without
/// process noise a single deterministic trajectory is returned.
pub fn rollout_policies(
    game: &LQGame,
    policies: &[Vec<Policy>],
    x0: &DVector<f64>,
    noise_seed: u64,
    n_samples: usize,
) -> Result<Rollouts, GameError> {
    game.validate()?;
    if x0.len() != game.n_state() {
        return Err(GameError::Dimension(format!("x0 has length {}, expected {}", x0.len(), game.n_state())));
    }
    if policies.len() != game.horizon() {
        return Err(GameError::Dimension(format!("{} policy steps for horizon {}", policies.len(), game.horizon())));
    }
    if n_samples == 0 {
        return Err(GameError::EmptySamples);
    }
    let deterministic = game.stages.iter().all(|s| s.w.iter().all(|&x| x == 0.0));
    let n_samples = if deterministic { 1 } else { n_samples };
    let roots: Vec<DMatrix<f64>> = game.stages.iter().map(|s| psd_sqrt(&s.w)).collect();
    let p = game.n_players();
    let n = game.n_state();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);

    let mut states = Vec::with_capacity(n_samples);
    let mut costs = vec![Vec::with_capacity(n_samples); p];
    for _ in 0..n_samples {
        let mut x = x0.clone();
        let mut path = vec![x.clone()];
        let mut cost = vec![0.0; p];
        for (t, stage) in game.stages.iter().enumerate() {
            let u: Vec<DVector<f64>> = policies[t].iter().map(|pol| pol.control(&x)).collect();
            for (i, c) in cost.iter_mut().enumerate() {
                *c += 0.5 * x.dot(&(&stage.q[i] * &x)) + stage.l[i].dot(&x) + stage.c[i];
                for (j, uj) in u.iter().enumerate() {
                    *c += 0.5 * uj.dot(&(&stage.r[i][j] * uj));
                }
            }
            let mut next = &stage.a * &x;
            for (b, uj) in stage.b.iter().zip(&u) {
                next += b * uj;
            }
            if !deterministic {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                next += &roots[t] * z;
            }
            x = next;
            path.push(x.clone());
        }
        for (i, c) in cost.iter_mut().enumerate() {
            *c += 0.5 * x.dot(&(&game.terminal_q[i] * &x)) + game.terminal_l[i].dot(&x);
            costs[i].push(*c);
        }
        states.push(path);
    }
    let risk = costs
        .iter()
        .zip(&game.theta)
        .map(|(c, &theta)| entropic_risk(theta, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Rollouts { states, costs, risk })
}
