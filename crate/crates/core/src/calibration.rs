//! Mapping from CMetric values to entropic risk sensitivity, and k-means
//! categories over risk parameters.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Admissible risk interval, matching the training grid.
pub const THETA_BOUNDS: (f64, f64) = (-5.0, 5.0);
pub const GRID_STEP: f64 = 0.5;
pub const N_CLUSTERS: usize = 4;
pub const KMEANS_RESTARTS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("need at least 2 training pairs, got {0}")]
    TooFewPairs(usize),
    #[error("all behavior values are identical; slope undetermined")]
    DegenerateFit,
    #[error("non-finite training pair at index {0}")]
    NonFinite(usize),
    #[error("need at least {needed} distinct values, got {got}")]
    TooFewDistinct { needed: usize, got: usize },
    #[error("grid point {0} outside bounds")]
    OutOfBounds(f64),
    #[error("i/o: {0}")]
    Io(String),
}

/// `θ = β₁·ζ + β₀`, clamped to `bounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMapping {
    pub beta0: f64,
    pub beta1: f64,
    pub bounds: (f64, f64),
    /// `(ζ̂, θ̂)` pairs the mapping was fitted on.
    pub training_pairs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappedTheta {
    pub theta: f64,
    pub clamped: bool,
}

impl RiskMapping {
    pub fn raw(&self, zeta: f64) -> f64 {
        self.beta1 * zeta + self.beta0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mapping serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        serde_json::from_str(text).map_err(|e| CalibrationError::Io(e.to_string()))
    }
}

/// The training grid `lo, lo + step, ..., hi`.
pub fn theta_grid(bounds: (f64, f64), step: f64) -> Vec<f64> {
    let n = ((bounds.1 - bounds.0) / step).round() as usize;
    (0..=n).map(|k| bounds.0 + k as f64 * step).collect()
}

/// Evaluates `evaluate(θ̂)` on every grid point in parallel and collects
/// `(ζ̂, θ̂)` pairs. Points whose evaluation returns `None` (a breakdown)
/// are dropped with a warning.
pub fn generate_training_set<F>(grid: &[f64], bounds: (f64, f64), evaluate: F) -> Result<Vec<(f64, f64)>, CalibrationError>
where
    F: Fn(f64) -> Option<f64> + Sync,
{
    if let Some(&bad) = grid.iter().find(|&&t| t < bounds.0 || t > bounds.1) {
        return Err(CalibrationError::OutOfBounds(bad));
    }
    let zetas: Vec<Option<f64>> = grid.par_iter().map(|&t| evaluate(t)).collect();
    Ok(grid
        .iter()
        .zip(zetas)
        .filter_map(|(&theta, zeta)| match zeta {
            Some(z) => Some((z, theta)),
            None => {
                log::warn!("grid point theta={theta} dropped after breakdown");
                None
            }
        })
        .collect())
}

/// Ordinary least squares of θ on ζ.
pub fn fit(pairs: &[(f64, f64)], bounds: (f64, f64)) -> Result<RiskMapping, CalibrationError> {
    if pairs.len() < 2 {
        return Err(CalibrationError::TooFewPairs(pairs.len()));
    }
    if let Some(i) = pairs.iter().position(|(z, t)| !(z.is_finite() && t.is_finite())) {
        return Err(CalibrationError::NonFinite(i));
    }
    let n = pairs.len() as f64;
    let zm = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let tm = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - zm).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - zm) * (p.1 - tm)).sum();
    if sxx == 0.0 {
        return Err(CalibrationError::DegenerateFit);
    }
    let beta1 = sxy / sxx;
    Ok(RiskMapping { beta0: tm - beta1 * zm, beta1, bounds, training_pairs: pairs.to_vec() })
}

pub fn map_to_theta(mapping: &RiskMapping, zeta: f64) -> MappedTheta {
    let raw = mapping.raw(zeta);
    let theta = raw.clamp(mapping.bounds.0, mapping.bounds.1);
    MappedTheta { theta, clamped: theta != raw }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskLabel {
    VeryConservative,
    Conservative,
    Aggressive,
    VeryAggressive,
}

impl RiskLabel {
    pub const ORDER: [RiskLabel; N_CLUSTERS] =
        [RiskLabel::VeryConservative, RiskLabel::Conservative, RiskLabel::Aggressive, RiskLabel::VeryAggressive];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLabel::VeryConservative => "very_conservative",
            RiskLabel::Conservative => "conservative",
            RiskLabel::Aggressive => "aggressive",
            RiskLabel::VeryAggressive => "very_aggressive",
        }
    }
}

/// Four clusters ordered by descending centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskClusters {
    pub k: usize,
    pub centroids: Vec<f64>,
    pub labels: Vec<RiskLabel>,
    /// Cluster index (into `centroids`) of every input point.
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

impl RiskClusters {
    pub fn label_of(&self, point: usize) -> RiskLabel {
        self.labels[self.assignments[point]]
    }

    /// Label of the centroid nearest to `theta`.
    pub fn classify(&self, theta: f64) -> RiskLabel {
        self.labels[nearest(&self.centroids, theta)]
    }

    /// CSV report `theta,cluster,label,centroid`.
    pub fn write_csv<W: Write>(&self, thetas: &[f64], writer: W) -> Result<(), CalibrationError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| CalibrationError::Io(e.to_string());
        w.write_record(["theta", "cluster", "label", "centroid"]).map_err(io)?;
        for (theta, &c) in thetas.iter().zip(&self.assignments) {
            w.write_record([theta.to_string(), c.to_string(), self.labels[c].as_str().to_string(), self.centroids[c].to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| CalibrationError::Io(e.to_string()))
    }
}

fn nearest(centroids: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (c, &m) in centroids.iter().enumerate() {
        if (x - m).abs() < (x - centroids[best]).abs() {
            best = c;
        }
    }
    best
}

fn inertia(points: &[f64], centroids: &[f64], assign: &[usize]) -> f64 {
    points.iter().zip(assign).map(|(x, &c)| (x - centroids[c]).powi(2)).sum()
}

fn kmeans_pp(points: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|&x| centroids.iter().map(|&c| (x - c).powi(2)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d2.iter().sum();
        let mut r = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && r < d {
                pick = i;
                break;
            }
            r -= d;
        }
        centroids.push(points[pick]);
    }
    centroids
}

fn lloyd(points: &[f64], mut centroids: Vec<f64>) -> (Vec<f64>, Vec<usize>) {
    let mut assign: Vec<usize> = points.iter().map(|&x| nearest(&centroids, x)).collect();
    loop {
        for (c, m) in centroids.iter_mut().enumerate() {
            let members: Vec<f64> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(&x, _)| x).collect();
            if !members.is_empty() {
                *m = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|&x| nearest(&centroids, x)).collect();
        if next == assign {
            return (centroids, assign);
        }
        assign = next;
    }
}

/// Single-point moves that lower the total inertia (Hartigan's rule). A
/// Lloyd fixed point can still admit such a move because moving a point
/// also shifts both centroids.
fn hartigan(points: &[f64], centroids: &mut [f64], assign: &mut [usize]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &a in assign.iter() {
        counts[a] += 1;
    }
    loop {
        let mut moved = false;
        for (i, &x) in points.iter().enumerate() {
            let a = assign[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let removal = na / (na - 1.0) * (x - centroids[a]).powi(2);
            let mut best = (a, removal);
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let cost = nb / (nb + 1.0) * (x - centroids[b]).powi(2);
                if cost < best.1 - 1e-12 {
                    best = (b, cost);
                }
            }
            let b = best.0;
            if b != a {
                let nb = counts[b] as f64;
                centroids[a] = (centroids[a] * na - x) / (na - 1.0);
                centroids[b] = (centroids[b] * nb + x) / (nb + 1.0);
                counts[a] -= 1;
                counts[b] += 1;
                assign[i] = b;
                moved = true;
            }
        }
        if !moved {
            return;
        }
    }
}

/// k-means with k = 4: k-means++ seeding, Lloyd iterations refined by
/// Hartigan moves, best inertia of [`KMEANS_RESTARTS`] restarts.
pub fn cluster(thetas: &[f64], seed: u64) -> Result<RiskClusters, CalibrationError> {
    let mut distinct: Vec<f64> = thetas.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < N_CLUSTERS {
        return Err(CalibrationError::TooFewDistinct { needed: N_CLUSTERS, got: distinct.len() });
    }
    if let Some(i) = thetas.iter().position(|t| !t.is_finite()) {
        return Err(CalibrationError::NonFinite(i));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (mut centroids, mut assign) = lloyd(thetas, kmeans_pp(thetas, N_CLUSTERS, &mut rng));
        hartigan(thetas, &mut centroids, &mut assign);
        // Recompute means exactly and settle on the nearest-centroid labels.
        let (centroids, assign) = lloyd(thetas, centroids);
        let j = inertia(thetas, &centroids, &assign);
        if best.as_ref().is_none_or(|b| j < b.0) {
            best = Some((j, centroids, assign));
        }
    }
    let (j, centroids, assign) = best.unwrap();

    let mut order: Vec<usize> = (0..N_CLUSTERS).collect();
    order.sort_by(|&a, &b| centroids[b].total_cmp(&centroids[a]));
    let mut rank = vec![0; N_CLUSTERS];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    Ok(RiskClusters {
        k: N_CLUSTERS,
        centroids: order.iter().map(|&c| centroids[c]).collect(),
        labels: RiskLabel::ORDER.to_vec(),
        assignments: assign.iter().map(|&c| rank[c]).collect(),
        inertia: j,
    })
}
