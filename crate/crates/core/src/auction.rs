//! Turn-based orderings from behavior bids.
//!
//! Agents bid their behavior value `ζ`; the `k`-th highest bidder gets slot
//! `k` with time reward `α_k = 1/t_k`. The agent in slot `k` receives
//!
//! ```text
//! u_k = ζ_k α_k − Σ_{j=k}^{K} b_{j+1} (α_j − α_{j+1}),   b_{K+1} = 0
//! ```
//!
//! where the sum is the price set by the bids below it. Bid ties go to the
//! lower agent id.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest instance whose permutations are enumerated exhaustively.
pub const EXHAUSTIVE_MAX_K: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum AuctionError {
    #[error("instance has no agents")]
    Empty,
    #[error("{bids} bids for {times} turn times")]
    LengthMismatch { bids: usize, times: usize },
    #[error("turn times must be positive and strictly increasing (slot {0})")]
    NonIncreasingTimes(usize),
    #[error("non-finite bid or time at index {0}")]
    NonFinite(usize),
    #[error("agent {0} is not in the instance")]
    UnknownAgent(usize),
    #[error("invalid instance JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionInstance {
    /// Bid of each agent, indexed by agent id.
    pub bids: Vec<f64>,
    /// Turn time of each slot (s), increasing.
    pub times: Vec<f64>,
}

impl AuctionInstance {
    pub fn new(bids: Vec<f64>, times: Vec<f64>) -> Result<Self, AuctionError> {
        let inst = AuctionInstance { bids, times };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), AuctionError> {
        if self.bids.is_empty() {
            return Err(AuctionError::Empty);
        }
        if self.bids.len() != self.times.len() {
            return Err(AuctionError::LengthMismatch { bids: self.bids.len(), times: self.times.len() });
        }
        if let Some(i) = self.bids.iter().chain(&self.times).position(|x| !x.is_finite()) {
            return Err(AuctionError::NonFinite(i % self.bids.len()));
        }
        if !(self.times[0] > 0.0) {
            return Err(AuctionError::NonIncreasingTimes(0));
        }
        if let Some(k) = self.times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(AuctionError::NonIncreasingTimes(k + 1));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.bids.len()
    }

    /// Time rewards `α_k = 1/t_k`.
    pub fn rewards(&self) -> Vec<f64> {
        self.times.iter().map(|t| 1.0 / t).collect()
    }

    pub fn from_json(text: &str) -> Result<Self, AuctionError> {
        let inst: AuctionInstance = serde_json::from_str(text).map_err(|e| AuctionError::Json(e.to_string()))?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingResult {
    /// `ordering[k]` is the agent in slot `k`.
    pub ordering: Vec<usize>,
    /// Utility of the agent in each slot.
    pub utilities: Vec<f64>,
    /// Price paid in each slot.
    pub payments: Vec<f64>,
    pub welfare: f64,
}

impl OrderingResult {
    pub fn slot_of(&self, agent: usize) -> Option<usize> {
        self.ordering.iter().position(|&a| a == agent)
    }

    pub fn utility_of(&self, agent: usize) -> Option<f64> {
        self.slot_of(agent).map(|k| self.utilities[k])
    }
}

/// Agents by descending bid, ties to the lower id.
pub fn rank(bids: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..bids.len()).collect();
    order.sort_by(|&a, &b| match bids[b].total_cmp(&bids[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}

/// Slot prices `p_k = Σ_{j=k}^{K} b_{j+1} (α_j − α_{j+1})` for bids sorted
/// in slot order. The `j = K` term vanishes with `b_{K+1} = 0`.
pub fn payments(sorted_bids: &[f64], rewards: &[f64]) -> Vec<f64> {
    let k = sorted_bids.len();
    let mut p = vec![0.0; k];
    for slot in (0..k.saturating_sub(1)).rev() {
        p[slot] = sorted_bids[slot + 1] * (rewards[slot] - rewards[slot + 1]) + p[slot + 1];
    }
    p
}

/// `Σ_k b_{σ(k)} / t_k` for an arbitrary ordering.
pub fn welfare(bids: &[f64], times: &[f64], ordering: &[usize]) -> f64 {
    ordering.iter().zip(times).map(|(&a, t)| bids[a] / t).sum()
}

pub fn allocate(inst: &AuctionInstance) -> Result<OrderingResult, AuctionError> {
    inst.validate()?;
    let alpha = inst.rewards();
    let ordering = rank(&inst.bids);
    let sorted: Vec<f64> = ordering.iter().map(|&a| inst.bids[a]).collect();
    let payments = payments(&sorted, &alpha);
    let utilities = sorted.iter().zip(&alpha).zip(&payments).map(|((b, a), p)| b * a - p).collect();
    let welfare = welfare(&inst.bids, &inst.times, &ordering);
    Ok(OrderingResult { ordering, utilities, payments, welfare })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub bid: f64,
    pub slot: usize,
    /// The agent's utility at its true value when bidding `bid`.
    pub utility: f64,
    /// Truthful utility minus `utility`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncentiveReport {
    pub agent: usize,
    pub truthful_slot: usize,
    pub truthful_utility: f64,
    pub deviations: Vec<Deviation>,
}

impl IncentiveReport {
    /// No deviation gains more than `tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.deviations.iter().all(|d| d.margin >= -tol)
    }

    pub fn worst_margin(&self) -> Option<f64> {
        self.deviations.iter().map(|d| d.margin).reduce(f64::min)
    }
}

/// Slot and utility of `agent`, whose true value is its instance bid, when
/// it bids `bid` and everyone else bids truthfully.
pub fn deviated_utility(inst: &AuctionInstance, agent: usize, bid: f64) -> Result<(usize, f64), AuctionError> {
    if agent >= inst.k() {
        return Err(AuctionError::UnknownAgent(agent));
    }
    let mut bids = inst.bids.clone();
    bids[agent] = bid;
    let order = rank(&bids);
    let sorted: Vec<f64> = order.iter().map(|&a| bids[a]).collect();
    let alpha = inst.rewards();
    let slot = order.iter().position(|&a| a == agent).expect("agent is ranked");
    let price = payments(&sorted, &alpha)[slot];
    Ok((slot, inst.bids[agent] * alpha[slot] - price))
}

/// Bids reaching every slot and tie outcome available to `agent`: each
/// other bid exactly, points between consecutive distinct bids, just above
/// the highest and below the lowest, zero and the truthful bid.
pub fn exhaustive_deviations(inst: &AuctionInstance, agent: usize) -> Vec<f64> {
    let mut others: Vec<f64> = inst.bids.iter().enumerate().filter(|(i, _)| *i != agent).map(|(_, &b)| b).collect();
    others.sort_by(f64::total_cmp);
    others.dedup();
    let mut out = vec![inst.bids[agent], 0.0];
    if let (Some(lo), Some(hi)) = (others.first(), others.last()) {
        let span = (hi - lo).abs().max(hi.abs()).max(1.0);
        out.push(hi + span);
        out.push(lo - span);
    }
    for w in others.windows(2) {
        out.push(0.5 * (w[0] + w[1]));
    }
    out.extend(&others);
    out
}

pub fn check_incentive_compatibility(inst: &AuctionInstance, agent: usize, deviation_bids: &[f64]) -> Result<IncentiveReport, AuctionError> {
    inst.validate()?;
    let (truthful_slot, truthful_utility) = deviated_utility(inst, agent, inst.bids[agent])?;
    let deviations = deviation_bids
        .iter()
        .map(|&bid| {
            let (slot, utility) = deviated_utility(inst, agent, bid)?;
            Ok(Deviation { bid, slot, utility, margin: truthful_utility - utility })
        })
        .collect::<Result<_, AuctionError>>()?;
    Ok(IncentiveReport { agent, truthful_slot, truthful_utility, deviations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareReport {
    pub sorted_welfare: f64,
    pub best_welfare: f64,
    pub best_ordering: Vec<usize>,
    pub orderings_checked: usize,
    pub exhaustive: bool,
}

impl WelfareReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.sorted_welfare >= self.best_welfare - tol
    }
}

/// Compares the sorted allocation with every permutation for
/// `K <= EXHAUSTIVE_MAX_K`, otherwise with `samples` seeded shuffles.
pub fn check_welfare_optimality(inst: &AuctionInstance, samples: usize, seed: u64) -> Result<WelfareReport, AuctionError> {
    let sorted = allocate(inst)?;
    let mut report = WelfareReport {
        sorted_welfare: sorted.welfare,
        best_welfare: sorted.welfare,
        best_ordering: sorted.ordering.clone(),
        orderings_checked: 0,
        exhaustive: inst.k() <= EXHAUSTIVE_MAX_K,
    };
    let consider = |perm: &[usize], report: &mut WelfareReport| {
        let w = welfare(&inst.bids, &inst.times, perm);
        report.orderings_checked += 1;
        if w > report.best_welfare {
            report.best_welfare = w;
            report.best_ordering = perm.to_vec();
        }
    };
    let mut perm: Vec<usize> = (0..inst.k()).collect();
    if report.exhaustive {
        // Heap's algorithm.
        let n = perm.len();
        let mut c = vec![0; n];
        consider(&perm, &mut report);
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                consider(&perm, &mut report);
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            perm.shuffle(&mut rng);
            consider(&perm, &mut report);
        }
    }
    Ok(report)
}
