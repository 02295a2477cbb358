//! CMetric behavior profiles and annotation scoring.
//!
//! Three centralities are tracked per agent and tick:
//!
//! - closeness `ζ_c = (N-1) / Σ_j dist(i, j)` with shortest-path distances
//!   on the tick graph; unreachable vertices count as `10·μ`;
//! - degree `ζ_d`, the number of distinct agents ever seen as neighbors;
//! - eigenvector `ζ_e`, the agent's entry in the unit principal eigenvector
//!   of the tick adjacency (uniform when the adjacency is zero).
//!
//! Style likelihood (SLE) and intensity (SIE) are the absolute first and
//! second time derivatives of a series. Overtaking, weaving and tailgating
//! show up as rapid changes in how close an agent sits to the rest of the
//! traffic, so the scalar CMetric `ζ` is the peak closeness SLE over the
//! window. Degree growth tracks how many new vehicles an agent encounters
//! (overspeeding, overtaking) and eigenvector centrality tracks its
//! importance among well connected neighbors (clustering, blocking).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::Read;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, GraphHistory, TrafficGraph};
use crate::sim::TrajectoryRow;

/// Multiple of `μ` charged for an unreachable vertex in closeness.
pub const UNREACHABLE_FACTOR: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum BehaviorError {
    #[error("series of length {len} is shorter than the {needed}-point stencil")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("time step must be positive, got {0}")]
    InvalidDt(f64),
    #[error("agent {0} is absent from the window")]
    AgentAbsent(u32),
    #[error("empty window")]
    EmptyWindow,
    #[error("annotation set is empty")]
    EmptyAnnotations,
    #[error("annotation {index} ends before it starts ({start} > {end})")]
    InvertedInterval { index: usize, start: i64, end: i64 },
    #[error("annotation i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Closeness of every vertex in `graph`. `None` when the graph has a single
/// vertex.
pub fn closeness(graph: &TrafficGraph) -> Vec<Option<f64>> {
    let n = graph.len();
    if n < 2 {
        return vec![None; n];
    }
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in &graph.edges {
        adj[e.i].push((e.j, e.distance));
        adj[e.j].push((e.i, e.distance));
    }
    let cap = UNREACHABLE_FACTOR * graph.mu;
    (0..n)
        .map(|src| {
            let dist = dijkstra(&adj, src);
            let total: f64 = dist.iter().enumerate().filter(|&(j, _)| j != src).map(|(_, d)| d.unwrap_or(cap)).sum();
            Some(if total > 0.0 { (n - 1) as f64 / total } else { f64::INFINITY })
        })
        .collect()
}

#[derive(PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], src: usize) -> Vec<Option<f64>> {
    let mut dist = vec![None; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[src] = Some(0.0);
    heap.push(Frontier(0.0, src));
    while let Some(Frontier(d, u)) = heap.pop() {
        if dist[u].is_some_and(|best| d > best) {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if dist[v].is_none_or(|best| nd < best) {
                dist[v] = Some(nd);
                heap.push(Frontier(nd, v));
            }
        }
    }
    dist
}

/// Unit principal eigenvector of a symmetric non-negative matrix and its
/// eigenvalue, oriented so the largest-magnitude entry is positive. A zero
/// matrix yields the uniform vector with eigenvalue 0.
pub fn principal_eigenvector(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (0.0, DVector::zeros(0));
    }
    if a.iter().all(|&x| x == 0.0) {
        return (0.0, DVector::from_element(n, 1.0 / (n as f64).sqrt()));
    }
    let eig = SymmetricEigen::new(a.clone());
    let k = eig.eigenvalues.imax();
    let mut v = eig.eigenvectors.column(k).into_owned();
    let pivot = v.iamax();
    if v[pivot] < 0.0 {
        v = -v;
    }
    (eig.eigenvalues[k], v)
}

/// Eigenvector centrality of every vertex in `graph`.
pub fn eigenvector_centrality(graph: &TrafficGraph) -> Vec<f64> {
    principal_eigenvector(&graph.adjacency).1.iter().copied().collect()
}

/// Absolute first derivative: central differences inside, one-sided at the
/// ends.
pub fn sle(series: &[f64], dt: f64) -> Result<Vec<f64>, BehaviorError> {
    check_dt(dt)?;
    let n = series.len();
    if n < 2 {
        return Err(BehaviorError::SeriesTooShort { len: n, needed: 2 });
    }
    Ok((0..n)
        .map(|k| {
            let d = if k == 0 {
                (series[1] - series[0]) / dt
            } else if k == n - 1 {
                (series[n - 1] - series[n - 2]) / dt
            } else {
                (series[k + 1] - series[k - 1]) / (2.0 * dt)
            };
            d.abs()
        })
        .collect())
}

/// Absolute second derivative: central three-point stencil, shifted inward
/// at the ends.
pub fn sie(series: &[f64], dt: f64) -> Result<Vec<f64>, BehaviorError> {
    check_dt(dt)?;
    let n = series.len();
    if n < 3 {
        return Err(BehaviorError::SeriesTooShort { len: n, needed: 3 });
    }
    Ok((0..n)
        .map(|k| {
            let c = k.clamp(1, n - 2);
            ((series[c + 1] - 2.0 * series[c] + series[c - 1]) / (dt * dt)).abs()
        })
        .collect())
}

pub fn sle_sie(series: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>), BehaviorError> {
    Ok((sle(series, dt)?, sie(series, dt)?))
}

fn check_dt(dt: f64) -> Result<(), BehaviorError> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(BehaviorError::InvalidDt(dt))
    }
}

/// One value per centrality.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Centralities {
    pub closeness: Vec<f64>,
    pub degree: Vec<f64>,
    pub eigenvector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub agent_id: u32,
    /// Tick of each series entry (the agent's presence within the window).
    pub frames: Vec<u64>,
    pub dt: f64,
    /// Closeness; `null` on ticks where the agent is alone.
    pub zeta_c: Vec<Option<f64>>,
    pub zeta_d: Vec<f64>,
    pub zeta_e: Vec<f64>,
    pub sle: Centralities,
    pub sie: Centralities,
    pub zeta: f64,
    /// First and last tick of the window.
    pub window: (u64, u64),
}

impl BehaviorProfile {
    /// Frame of the peak closeness SLE (earliest on ties).
    pub fn peak_frame(&self) -> u64 {
        let mut best = 0;
        for (k, &v) in self.sle.closeness.iter().enumerate() {
            if v > self.sle.closeness[best] {
                best = k;
            }
        }
        self.frames[best]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }
}

/// Closeness with absent entries held at the nearest earlier value (or the
/// first present value at the start; zero if none is present).
fn filled(series: &[Option<f64>]) -> Vec<f64> {
    let first = series.iter().flatten().next().copied().unwrap_or(0.0);
    let mut last = first;
    series
        .iter()
        .map(|x| {
            if let Some(v) = x {
                last = *v;
            }
            last
        })
        .collect()
}

/// Profile of `agent` over the graphs `window` of `history`. Degree counts
/// neighbors from the start of the history.
pub fn behavior_profile(
    history: &GraphHistory,
    agent: u32,
    window: Range<usize>,
    dt: f64,
) -> Result<BehaviorProfile, BehaviorError> {
    check_dt(dt)?;
    if window.is_empty() || window.end > history.graphs.len() {
        return Err(BehaviorError::EmptyWindow);
    }
    let mut seen: BTreeSet<u32> = BTreeSet::new();
    let mut profile = BehaviorProfile {
        agent_id: agent,
        frames: Vec::new(),
        dt,
        zeta_c: Vec::new(),
        zeta_d: Vec::new(),
        zeta_e: Vec::new(),
        sle: Centralities::default(),
        sie: Centralities::default(),
        zeta: 0.0,
        window: (history.graphs[window.start].t, history.graphs[window.end - 1].t),
    };
    for (k, graph) in history.graphs[..window.end].iter().enumerate() {
        let Some(i) = graph.index_of(agent) else { continue };
        seen.extend(graph.neighbors(i).map(|(j, _)| graph.ids[j]));
        if k < window.start {
            continue;
        }
        profile.frames.push(graph.t);
        profile.zeta_c.push(closeness(graph)[i]);
        profile.zeta_d.push(seen.len() as f64);
        profile.zeta_e.push(eigenvector_centrality(graph)[i]);
    }
    if profile.frames.is_empty() {
        return Err(BehaviorError::AgentAbsent(agent));
    }
    let c = filled(&profile.zeta_c);
    let (c_sle, c_sie) = sle_sie(&c, dt)?;
    let (d_sle, d_sie) = sle_sie(&profile.zeta_d, dt)?;
    let (e_sle, e_sie) = sle_sie(&profile.zeta_e, dt)?;
    profile.sle = Centralities { closeness: c_sle, degree: d_sle, eigenvector: e_sle };
    profile.sie = Centralities { closeness: c_sie, degree: d_sie, eigenvector: e_sie };
    profile.zeta = cmetric_scalar(&profile)?;
    Ok(profile)
}

/// Profiles of every agent over a whole history, computed in parallel.
pub fn all_profiles(history: &GraphHistory, dt: f64) -> BTreeMap<u32, Result<BehaviorProfile, BehaviorError>> {
    use rayon::prelude::*;
    let ids: BTreeSet<u32> = history.graphs.iter().flat_map(|g| g.ids.iter().copied()).collect();
    let ids: Vec<u32> = ids.into_iter().collect();
    ids.par_iter()
        .map(|&id| (id, behavior_profile(history, id, 0..history.graphs.len(), dt)))
        .collect()
}

/// Peak closeness SLE over the profile window.
pub fn cmetric_scalar(profile: &BehaviorProfile) -> Result<f64, BehaviorError> {
    profile
        .sle
        .closeness
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(BehaviorError::EmptyWindow)
}

/// Graph history over trajectory rows, one graph per frame.
pub fn history_from_rows(rows: &[TrajectoryRow], mu: f64, reset_capacity: usize) -> Result<GraphHistory, BehaviorError> {
    let mut history = GraphHistory::new(mu, reset_capacity);
    let mut start = 0;
    while start < rows.len() {
        let frame = rows[start].frame;
        let end = start + rows[start..].iter().take_while(|r| r.frame == frame).count();
        let chunk = &rows[start..end];
        history.push_positions(frame, chunk.iter().map(|r| r.agent_id).collect(), chunk.iter().map(|r| [r.x_m, r.y_m]).collect())?;
        start = end;
    }
    Ok(history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator_id: u32,
    pub start_frame: i64,
    pub end_frame: i64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub annotations: Vec<Annotation>,
}

impl AnnotationSet {
    pub fn new(annotations: Vec<Annotation>) -> Result<Self, BehaviorError> {
        for (index, a) in annotations.iter().enumerate() {
            if a.start_frame > a.end_frame {
                return Err(BehaviorError::InvertedInterval { index, start: a.start_frame, end: a.end_frame });
            }
        }
        Ok(AnnotationSet { annotations })
    }

    /// Builds a set from `(start, end)` pairs numbered from 0.
    pub fn from_intervals(intervals: &[(i64, i64)]) -> Result<Self, BehaviorError> {
        Self::new(
            intervals
                .iter()
                .enumerate()
                .map(|(k, &(s, e))| Annotation { annotator_id: k as u32, start_frame: s, end_frame: e })
                .collect(),
        )
    }

    /// Reads `annotator_id,start_frame,end_frame` CSV.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, BehaviorError> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r
            .deserialize()
            .enumerate()
            .map(|(i, row)| row.map_err(|e| BehaviorError::Io(format!("row {}: {e}", i + 2))))
            .collect::<Result<Vec<Annotation>, _>>()?;
        Self::new(rows)
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }
}

/// Expected aggressive frame: coverage counts over `[min S, max E]`,
/// normalized to a probability mass.
pub fn expected_aggressive_frame(ann: &AnnotationSet) -> Result<f64, BehaviorError> {
    let lo = ann.annotations.iter().map(|a| a.start_frame).min().ok_or(BehaviorError::EmptyAnnotations)?;
    let hi = ann.annotations.iter().map(|a| a.end_frame).max().unwrap();
    let mut counts = vec![0u64; (hi - lo + 1) as usize];
    for a in &ann.annotations {
        for t in a.start_frame..=a.end_frame {
            counts[(t - lo) as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    Ok(counts.iter().enumerate().map(|(k, &c)| (lo + k as i64) as f64 * c as f64).sum::<f64>() / total as f64)
}

/// Time difference error in frames between the peak closeness SLE and the
/// expected annotated frame.
pub fn tde(profile: &BehaviorProfile, ann: &AnnotationSet) -> Result<f64, BehaviorError> {
    Ok((profile.peak_frame() as f64 - expected_aggressive_frame(ann)?).abs())
}
