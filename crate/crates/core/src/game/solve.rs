//! Coupled risk-sensitive Riccati recursion.
//!
//! Player `i`'s entropic value-to-go is quadratic,
//! `V_t^i(x) = ½ xᵀZ x + ζᵀx + c`. Taking the entropic expectation of
//! `V_{t+1}^i(m + w)` over `w ~ N(0, W)` yields another quadratic in the mean
//! `m` with
//!
//! ```text
//! M  = (I − θ W Z)⁻¹ W
//! Z̃  = Z + θ Z M Z
//! ζ̃  = ζ + θ Z M ζ
//! c̃  = c + ½θ ζᵀMζ − (1/2θ) log det(I − θ W Z)
//! ```
//!
//! which requires `I − θ W^{1/2} Z W^{1/2} ≻ 0`; losing that is the neurotic
//! breakdown. Each step then solves the simultaneous first-order conditions
//! of all players for affine feedback `u^i = −K^i x − k^i`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{psd_sqrt, symmetrize, GameError, LQGame, Stage};

/// Smallest admissible eigenvalue of `I − θ W^{1/2} Z W^{1/2}`.
const INFLATION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticValue {
    pub z: DMatrix<f64>,
    pub zeta: DVector<f64>,
    pub c: f64,
}

impl QuadraticValue {
    pub fn zero(n: usize) -> Self {
        QuadraticValue { z: DMatrix::zeros(n, n), zeta: DVector::zeros(n), c: 0.0 }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.z * x)) + self.zeta.dot(x) + self.c
    }
}

/// Affine feedback `u = −K x − k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl Policy {
    pub fn zero(m: usize, n: usize) -> Self {
        Policy { gain: DMatrix::zeros(m, n), offset: DVector::zeros(m) }
    }

    pub fn control(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.gain * x) - &self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakdownReason {
    /// `I − θ W Z` lost positive definiteness.
    NoiseInflation,
    /// The player's stage problem `R^{ii} + B^iᵀZ̃B^i` is not convex.
    NotConvex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub step: usize,
    pub player: usize,
    pub reason: BreakdownReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashSolution {
    /// `policies[t][i]`. After a breakdown, steps up to and including the
    /// breakdown step hold zero policies.
    pub policies: Vec<Vec<Policy>>,
    /// `values[t][i]` for `t = 0..=T`.
    pub values: Vec<Vec<QuadraticValue>>,
    pub breakdown: Option<Breakdown>,
}

impl NashSolution {
    pub fn is_breakdown(&self) -> bool {
        self.breakdown.is_some()
    }

    pub fn ensure_ok(&self) -> Result<&Self, GameError> {
        match self.breakdown {
            Some(b) => Err(GameError::NeuroticBreakdown { step: b.step, player: b.player }),
            None => Ok(self),
        }
    }

    pub fn controls(&self, t: usize, x: &DVector<f64>) -> Vec<DVector<f64>> {
        self.policies[t].iter().map(|p| p.control(x)).collect()
    }

    /// Equilibrium entropic cost of player `i` from `x0`.
    pub fn value(&self, i: usize, x0: &DVector<f64>) -> Result<f64, GameError> {
        self.ensure_ok()?;
        Ok(self.values[0][i].eval(x0))
    }
}

/// Entropic expectation of `v(m + w)` as a quadratic in `m`. `None` on
/// breakdown.
pub(crate) fn risk_backup(v: &QuadraticValue, w: &DMatrix<f64>, theta: f64) -> Option<QuadraticValue> {
    if w.iter().all(|&x| x == 0.0) {
        return Some(v.clone());
    }
    if theta == 0.0 {
        return Some(QuadraticValue { z: v.z.clone(), zeta: v.zeta.clone(), c: v.c + 0.5 * (w * &v.z).trace() });
    }
    let sw = psd_sqrt(w);
    let eig = SymmetricEigen::new(symmetrize(&(&sw * &v.z * &sw)));
    if eig.eigenvalues.iter().any(|&l| 1.0 - theta * l <= INFLATION_EPS) {
        return None;
    }
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / (1.0 - theta * l)));
    let m = symmetrize(&(&sw * &eig.eigenvectors * inv * eig.eigenvectors.transpose() * &sw));
    let zm = &v.z * &m;
    let z = symmetrize(&(&v.z + &zm * &v.z * theta));
    let zeta = &v.zeta + &zm * &v.zeta * theta;
    let log_term: f64 = eig.eigenvalues.iter().map(|&l| -(-theta * l).ln_1p() / (2.0 * theta)).sum();
    let c = v.c + 0.5 * theta * v.zeta.dot(&(&m * &v.zeta)) + log_term;
    if z.iter().chain(zeta.iter()).any(|x| !x.is_finite()) || !c.is_finite() {
        return None;
    }
    Some(QuadraticValue { z, zeta, c })
}

/// One step of the value recursion under a fixed policy profile.
fn propagate(stage: &Stage, i: usize, tilde: &QuadraticValue, policies: &[Policy]) -> QuadraticValue {
    let n = stage.a.nrows();
    let mut f = stage.a.clone();
    let mut beta = DVector::zeros(n);
    for (b, p) in stage.b.iter().zip(policies) {
        f -= b * &p.gain;
        beta -= b * &p.offset;
    }
    let mut z = stage.q[i].clone() + f.transpose() * &tilde.z * &f;
    let mut zeta = &stage.l[i] + f.transpose() * (&tilde.z * &beta + &tilde.zeta);
    let mut c = stage.c[i] + 0.5 * beta.dot(&(&tilde.z * &beta)) + tilde.zeta.dot(&beta) + tilde.c;
    for (r, p) in stage.r[i].iter().zip(policies) {
        let rk = r * &p.gain;
        z += p.gain.transpose() * &rk;
        zeta += rk.transpose() * &p.offset;
        c += 0.5 * p.offset.dot(&(r * &p.offset));
    }
    QuadraticValue { z: symmetrize(&z), zeta, c }
}

fn terminal_values(game: &LQGame) -> Vec<QuadraticValue> {
    game.terminal_q
        .iter()
        .zip(&game.terminal_l)
        .map(|(q, l)| QuadraticValue { z: q.clone(), zeta: l.clone(), c: 0.0 })
        .collect()
}

/// Feedback Nash equilibrium by backward recursion.
///
/// Invalid games and singular simultaneous-response systems are errors. A
/// neurotic breakdown is reported in [`NashSolution::breakdown`] with finite
/// (zeroed) policies for the steps that could not be solved.
pub fn solve_nash(game: &LQGame) -> Result<NashSolution, GameError> {
    game.validate()?;
    let horizon = game.horizon();
    let p = game.n_players();
    let n = game.n_state();
    let dims = game.input_dims();
    let offsets: Vec<usize> = dims.iter().scan(0, |acc, &m| {
        let o = *acc;
        *acc += m;
        Some(o)
    }).collect();
    let total: usize = dims.iter().sum();

    let mut policies: Vec<Vec<Policy>> = vec![dims.iter().map(|&m| Policy::zero(m, n)).collect(); horizon];
    let mut values: Vec<Vec<QuadraticValue>> = vec![vec![QuadraticValue::zero(n); p]; horizon + 1];
    values[horizon] = terminal_values(game);

    for t in (0..horizon).rev() {
        let stage = &game.stages[t];
        let mut tilde = Vec::with_capacity(p);
        for i in 0..p {
            match risk_backup(&values[t + 1][i], &stage.w, game.theta[i]) {
                Some(v) => tilde.push(v),
                None => {
                    let breakdown = Breakdown { step: t, player: i, reason: BreakdownReason::NoiseInflation };
                    return Ok(NashSolution { policies, values, breakdown: Some(breakdown) });
                }
            }
        }

        let mut lhs = DMatrix::zeros(total, total);
        let mut rhs = DMatrix::zeros(total, n + 1);
        for i in 0..p {
            let bz = stage.b[i].transpose() * &tilde[i].z;
            let h = symmetrize(&(&stage.r[i][i] + &bz * &stage.b[i]));
            if Cholesky::new(h).is_none() {
                let breakdown = Breakdown { step: t, player: i, reason: BreakdownReason::NotConvex };
                return Ok(NashSolution { policies, values, breakdown: Some(breakdown) });
            }
            for j in 0..p {
                let mut block = &bz * &stage.b[j];
                if i == j {
                    block += &stage.r[i][i];
                }
                lhs.view_mut((offsets[i], offsets[j]), (dims[i], dims[j])).copy_from(&block);
            }
            rhs.view_mut((offsets[i], 0), (dims[i], n)).copy_from(&(&bz * &stage.a));
            rhs.view_mut((offsets[i], n), (dims[i], 1)).copy_from(&(stage.b[i].transpose() * &tilde[i].zeta));
        }
        let sol = lhs.lu().solve(&rhs).ok_or(GameError::NoEquilibrium { step: t })?;
        if sol.iter().any(|x| !x.is_finite()) {
            return Err(GameError::NoEquilibrium { step: t });
        }
        for i in 0..p {
            policies[t][i] = Policy {
                gain: sol.view((offsets[i], 0), (dims[i], n)).into_owned(),
                offset: sol.view((offsets[i], n), (dims[i], 1)).column(0).into_owned(),
            };
        }
        for i in 0..p {
            values[t][i] = propagate(stage, i, &tilde[i], &policies[t]);
        }
    }
    Ok(NashSolution { policies, values, breakdown: None })
}

/// Exact entropic value of every player under a fixed policy profile
/// (`policies[t][i]`), evaluated at `t = 0`.
pub fn evaluate_policies(game: &LQGame, policies: &[Vec<Policy>]) -> Result<Vec<QuadraticValue>, GameError> {
    game.validate()?;
    if policies.len() != game.horizon() {
        return Err(GameError::Dimension(format!("{} policy steps for horizon {}", policies.len(), game.horizon())));
    }
    let mut values = terminal_values(game);
    for t in (0..game.horizon()).rev() {
        let stage = &game.stages[t];
        for (i, value) in values.iter_mut().enumerate() {
            let tilde = risk_backup(value, &stage.w, game.theta[i]).ok_or(GameError::NeuroticBreakdown { step: t, player: i })?;
            *value = propagate(stage, i, &tilde, &policies[t]);
        }
    }
    Ok(values)
}
