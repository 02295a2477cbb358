//! Risk-sensitive linear-quadratic dynamic games.
//!
//! Dynamics `x_{t+1} = A_t x_t + Σ_i B_t^i u_t^i + w_t` with
//! `w_t ~ N(0, W_t)`. Player `i` pays
//!
//! ```text
//! Ψ^i = Σ_t [½ xᵀQ_t^i x + l_t^iᵀx + c_t^i + ½ Σ_j u^jᵀR_t^{ij}u^j] + ½ xᵀQ_T^i x + l_T^iᵀx
//! ```
//!
//! and minimizes the entropic risk `(1/θ_i) log E exp(θ_i Ψ^i)`; `θ > 0` is
//! risk-averse, `θ < 0` risk-seeking and `θ = 0` the expectation.

mod io;
mod risk;
mod rollout;
mod solve;

pub use io::{GameJson, MatrixJson};
pub use risk::{entropic_risk, gaussian_entropic_risk};
pub use rollout::{rollout, rollout_policies, Rollouts};
pub use solve::{evaluate_policies, solve_nash, Breakdown, BreakdownReason, NashSolution, Policy, QuadraticValue};

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Tolerance for symmetry and semidefiniteness checks, relative to the
/// largest entry.
const CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0} is not symmetric")]
    NotSymmetric(String),
    #[error("{0} is not positive semidefinite")]
    NotPsd(String),
    #[error("{0} is not positive definite")]
    NotPd(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("no equilibrium: simultaneous best-response system singular at step {step}")]
    NoEquilibrium { step: usize },
    #[error("neurotic breakdown for player {player} at step {step}")]
    NeuroticBreakdown { step: usize, player: usize },
    #[error("neurotic breakdown: entropic risk overflowed at theta = {theta}")]
    RiskOverflow { theta: f64 },
    #[error("empty sample set")]
    EmptySamples,
    #[error("game i/o: {0}")]
    Io(String),
}

/// Matrices of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub a: DMatrix<f64>,
    /// Input matrix per player.
    pub b: Vec<DMatrix<f64>>,
    pub w: DMatrix<f64>,
    pub q: Vec<DMatrix<f64>>,
    pub l: Vec<DVector<f64>>,
    /// `r[i][j]` weighs player `j`'s input in player `i`'s cost.
    pub r: Vec<Vec<DMatrix<f64>>>,
    /// Constant stage cost per player.
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LQGame {
    pub stages: Vec<Stage>,
    pub terminal_q: Vec<DMatrix<f64>>,
    pub terminal_l: Vec<DVector<f64>>,
    pub theta: Vec<f64>,
}

impl LQGame {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn n_players(&self) -> usize {
        self.theta.len()
    }

    pub fn n_state(&self) -> usize {
        self.terminal_q.first().map_or(0, |q| q.nrows())
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.stages.first().map_or_else(Vec::new, |s| s.b.iter().map(|b| b.ncols()).collect())
    }

    /// Copy of the game with different risk parameters.
    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        LQGame { theta, ..self.clone() }
    }

    /// Checks dimensions, symmetry and definiteness.
    pub fn validate(&self) -> Result<(), GameError> {
        let p = self.n_players();
        let n = self.n_state();
        if p == 0 || self.stages.is_empty() {
            return Err(GameError::Dimension("game needs at least one player and one stage".into()));
        }
        if let Some(i) = self.theta.iter().position(|t| !t.is_finite()) {
            return Err(GameError::NonFinite(format!("theta[{i}]")));
        }
        if self.terminal_q.len() != p || self.terminal_l.len() != p {
            return Err(GameError::Dimension("terminal costs per player".into()));
        }
        for i in 0..p {
            check_square(&self.terminal_q[i], n, &format!("Q_T[{i}]"))?;
            check_psd(&self.terminal_q[i], &format!("Q_T[{i}]"))?;
            check_len(&self.terminal_l[i], n, &format!("l_T[{i}]"))?;
        }
        let m = self.input_dims();
        for (t, s) in self.stages.iter().enumerate() {
            check_square(&s.a, n, &format!("A[{t}]"))?;
            check_square(&s.w, n, &format!("W[{t}]"))?;
            check_psd(&s.w, &format!("W[{t}]"))?;
            if s.b.len() != p || s.q.len() != p || s.l.len() != p || s.r.len() != p || s.c.len() != p {
                return Err(GameError::Dimension(format!("stage {t} must hold one entry per player")));
            }
            for i in 0..p {
                let name = |x: &str| format!("{x}[{t}][{i}]");
                if s.b[i].nrows() != n || s.b[i].ncols() != m[i] {
                    return Err(GameError::Dimension(format!("{} is {}x{}, expected {n}x{}", name("B"), s.b[i].nrows(), s.b[i].ncols(), m[i])));
                }
                check_square(&s.q[i], n, &name("Q"))?;
                check_psd(&s.q[i], &name("Q"))?;
                check_len(&s.l[i], n, &name("l"))?;
                if !s.c[i].is_finite() {
                    return Err(GameError::NonFinite(name("c")));
                }
                if s.r[i].len() != p {
                    return Err(GameError::Dimension(format!("{} needs one block per player", name("R"))));
                }
                for j in 0..p {
                    let rname = format!("R[{t}][{i}][{j}]");
                    check_square(&s.r[i][j], m[j], &rname)?;
                    if i == j {
                        check_pd(&s.r[i][j], &rname)?;
                    } else {
                        check_psd(&s.r[i][j], &rname)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_len(v: &DVector<f64>, n: usize, name: &str) -> Result<(), GameError> {
    if v.len() != n {
        return Err(GameError::Dimension(format!("{name} has length {}, expected {n}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(GameError::NonFinite(name.into()));
    }
    Ok(())
}

fn check_square(m: &DMatrix<f64>, n: usize, name: &str) -> Result<(), GameError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(GameError::Dimension(format!("{name} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(GameError::NonFinite(name.into()));
    }
    Ok(())
}

fn scale(m: &DMatrix<f64>) -> f64 {
    m.amax().max(1.0)
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<(), GameError> {
    if (m - m.transpose()).amax() > CHECK_TOL * scale(m) {
        return Err(GameError::NotSymmetric(name.into()));
    }
    Ok(())
}

fn check_psd(m: &DMatrix<f64>, name: &str) -> Result<(), GameError> {
    check_symmetric(m, name)?;
    if m.nrows() > 0 && SymmetricEigen::new(symmetrize(m)).eigenvalues.min() < -CHECK_TOL * scale(m) {
        return Err(GameError::NotPsd(name.into()));
    }
    Ok(())
}

fn check_pd(m: &DMatrix<f64>, name: &str) -> Result<(), GameError> {
    check_symmetric(m, name)?;
    if Cholesky::new(symmetrize(m)).is_none() {
        return Err(GameError::NotPd(name.into()));
    }
    Ok(())
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root of a PSD matrix (negative rounding clamped to 0).
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}
