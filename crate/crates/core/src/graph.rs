//! Dynamic geometric graphs over vehicle positions.
//!
//! Each tick connects vehicles closer than `mu`. The adjacency stores the
//! Euclidean distance of connected pairs, the degree is the row sum of the
//! adjacency, and the Laplacian carries the degree on its diagonal and the
//! kernel weight `-exp(-d)` off the diagonal.
//!
//! [`GraphHistory`] additionally maintains a temporal Laplacian over every
//! vehicle seen since the last reset. Vertices are appended in order of first
//! appearance and edges, once seen, are retained with their most recent
//! distance. Only rows and columns touched by a changed edge are rewritten;
//! the matrix is reset to zero once the vertex count exceeds
//! `reset_capacity`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default connection threshold (m).
pub const DEFAULT_MU: f64 = 50.0;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("distance threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("position {0} is not finite")]
    NonFinitePosition(usize),
    #[error("ids and positions differ in length ({ids} vs {positions})")]
    LengthMismatch { ids: usize, positions: usize },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("column {index} out of range for {cols} eigenvectors")]
    ColumnOutOfRange { index: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

/// Ordered id pair used as an undirected edge key.
pub fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficGraph {
    pub t: u64,
    pub ids: Vec<u32>,
    pub positions: Vec<[f64; 2]>,
    pub mu: f64,
    /// Distances of connected pairs, zero elsewhere.
    pub adjacency: DMatrix<f64>,
    /// Diagonal of the degree matrix.
    pub degree: DVector<f64>,
    pub laplacian: DMatrix<f64>,
    /// Connected pairs with `i < j` (vertex indices).
    pub edges: Vec<Edge>,
    /// Every id pair connected at this or any earlier tick since the last
    /// reset. A standalone graph only holds its own edges.
    pub seen_edges: BTreeSet<(u32, u32)>,
}

impl TrafficGraph {
    pub fn build(t: u64, ids: Vec<u32>, positions: Vec<[f64; 2]>, mu: f64) -> Result<Self, GraphError> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(GraphError::InvalidThreshold(mu));
        }
        if ids.len() != positions.len() {
            return Err(GraphError::LengthMismatch { ids: ids.len(), positions: positions.len() });
        }
        if let Some(bad) = positions.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(GraphError::NonFinitePosition(bad));
        }
        let n = positions.len();
        let mut adjacency = DMatrix::zeros(n, n);
        let mut laplacian = DMatrix::zeros(n, n);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let d = distance(positions[i], positions[j]);
                if d < mu {
                    adjacency[(i, j)] = d;
                    adjacency[(j, i)] = d;
                    let w = -(-d).exp();
                    laplacian[(i, j)] = w;
                    laplacian[(j, i)] = w;
                    edges.push(Edge { i, j, distance: d });
                }
            }
        }
        let degree = DVector::from_iterator(n, adjacency.row_iter().map(|r| r.sum()));
        for i in 0..n {
            laplacian[(i, i)] = degree[i];
        }
        let seen_edges = edges.iter().map(|e| edge_key(ids[e.i], ids[e.j])).collect();
        Ok(TrafficGraph { t, ids, positions, mu, adjacency, degree, laplacian, edges, seen_edges })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// Neighbor indices of vertex `i` (including zero-distance neighbors).
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.edges.iter().filter_map(move |e| {
            if e.i == i {
                Some((e.j, e.distance))
            } else if e.j == i {
                Some((e.i, e.distance))
            } else {
                None
            }
        })
    }

    pub fn dump(&self) -> GraphDump {
        GraphDump {
            t: self.t,
            ids: self.ids.clone(),
            edges: self.edges.iter().map(|e| (e.i, e.j, e.distance)).collect(),
            mu: self.mu,
        }
    }
}

/// Debug/overlay export of one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub t: u64,
    pub ids: Vec<u32>,
    pub edges: Vec<(usize, usize, f64)>,
    pub mu: f64,
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Graph over anonymous positions (ids are the indices).
pub fn build_graph(positions: &[[f64; 2]], mu: f64) -> Result<TrafficGraph, GraphError> {
    let ids = (0..positions.len() as u32).collect();
    TrafficGraph::build(0, ids, positions.to_vec(), mu)
}

/// Temporal Laplacian over all vertices seen since the last reset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemporalLaplacian {
    /// Vertex ids in order of first appearance.
    pub order: Vec<u32>,
    pub matrix: DMatrix<f64>,
    /// Retained edges with their latest distance.
    pub edges: BTreeMap<(u32, u32), f64>,
}

impl TemporalLaplacian {
    fn position(&self, id: u32) -> Option<usize> {
        self.order.iter().position(|&x| x == id)
    }

    /// Diagonal entry of vertex `id`: the sum of retained distances, summed
    /// over neighbors in first-appearance order.
    fn diagonal(&self, id: u32) -> f64 {
        self.order
            .iter()
            .filter_map(|&other| self.edges.get(&edge_key(id, other)).filter(|_| other != id))
            .sum()
    }

    fn grow(&mut self, new_ids: &[u32]) {
        let old = self.order.len();
        self.order.extend_from_slice(new_ids);
        let n = self.order.len();
        if n != old {
            let mut m = DMatrix::zeros(n, n);
            m.view_mut((0, 0), (old, old)).copy_from(&self.matrix);
            self.matrix = m;
        }
    }

    /// Applies the sparse symmetric correction for a changed edge. Only the
    /// entries `(a,a)`, `(b,b)`, `(a,b)` and `(b,a)` change.
    fn correct_edge(&mut self, a: u32, b: u32, d: f64) {
        self.edges.insert(edge_key(a, b), d);
        let (pa, pb) = (self.position(a).unwrap(), self.position(b).unwrap());
        let w = -(-d).exp();
        self.matrix[(pa, pb)] = w;
        self.matrix[(pb, pa)] = w;
        self.matrix[(pa, pa)] = self.diagonal(a);
        self.matrix[(pb, pb)] = self.diagonal(b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphHistory {
    pub mu: f64,
    pub reset_capacity: usize,
    pub graphs: Vec<TrafficGraph>,
    pub temporal: TemporalLaplacian,
    /// Ticks at which the temporal Laplacian was reset.
    pub resets: Vec<u64>,
}

impl GraphHistory {
    pub fn new(mu: f64, reset_capacity: usize) -> Self {
        GraphHistory { mu, reset_capacity, graphs: Vec::new(), temporal: TemporalLaplacian::default(), resets: Vec::new() }
    }

    /// Builds the tick graph for `ids`/`positions` and appends it.
    pub fn push_positions(&mut self, t: u64, ids: Vec<u32>, positions: Vec<[f64; 2]>) -> Result<&TrafficGraph, GraphError> {
        let graph = TrafficGraph::build(t, ids, positions, self.mu)?;
        self.push(graph);
        Ok(self.graphs.last().unwrap())
    }

    /// Appends a tick graph, updating the temporal Laplacian and the graph's
    /// cumulative edge set.
    pub fn push(&mut self, mut graph: TrafficGraph) {
        update_laplacian(self, &graph);
        graph.seen_edges = self.temporal.edges.keys().copied().collect();
        self.graphs.push(graph);
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Ticks (indices into `graphs`) where `id` is present.
    pub fn presence(&self, id: u32) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.graphs.iter().enumerate().filter_map(move |(k, g)| g.index_of(id).map(|i| (k, i)))
    }
}

/// Folds `new_graph` into the history's temporal Laplacian and returns it.
///
/// New vertices extend the matrix with zero rows and columns; every edge
/// whose distance changed (or that is new) is corrected in place. Edges not
/// present in `new_graph` keep their last value.
pub fn update_laplacian<'a>(history: &'a mut GraphHistory, new_graph: &TrafficGraph) -> &'a DMatrix<f64> {
    let temporal = &mut history.temporal;
    let new_ids: Vec<u32> = new_graph
        .ids
        .iter()
        .copied()
        .filter(|id| !temporal.order.contains(id))
        .collect();

    if temporal.order.len() + new_ids.len() > history.reset_capacity {
        let n = new_graph.len();
        *temporal = TemporalLaplacian { order: new_graph.ids.clone(), matrix: DMatrix::zeros(n, n), edges: BTreeMap::new() };
        history.resets.push(new_graph.t);
        return &history.temporal.matrix;
    }

    temporal.grow(&new_ids);
    for e in &new_graph.edges {
        let (a, b) = (new_graph.ids[e.i], new_graph.ids[e.j]);
        if temporal.edges.get(&edge_key(a, b)) != Some(&e.distance) {
            temporal.correct_edge(a, b, e.distance);
        }
    }
    &history.temporal.matrix
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues ascending.
/// Equal eigenvalues keep the solver's original column order.
pub fn spectrum(l: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>), GraphError> {
    if !is_symmetric(l) {
        return Err(GraphError::NotSymmetric);
    }
    let eig = SymmetricEigen::new(l.clone());
    let mut idx: Vec<usize> = (0..l.nrows()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(idx.len(), idx.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = DMatrix::from_columns(&idx.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect::<Vec<_>>());
    Ok((values, vectors))
}

/// Column `i` of `L·U`: entry `j` aggregates `u_i(j) - u_i(k)` over the
/// neighbors `k` of vertex `j`, weighted by the Laplacian entries.
pub fn vertex_topology(l: &DMatrix<f64>, u: &DMatrix<f64>, i: usize) -> Result<DVector<f64>, GraphError> {
    if !is_symmetric(l) {
        return Err(GraphError::NotSymmetric);
    }
    if u.nrows() != l.nrows() {
        return Err(GraphError::Dimension(format!("L is {}x{}, U has {} rows", l.nrows(), l.ncols(), u.nrows())));
    }
    if i >= u.ncols() {
        return Err(GraphError::ColumnOutOfRange { index: i, cols: u.ncols() });
    }
    Ok(l * u.column(i))
}
