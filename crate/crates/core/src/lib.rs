//! Heterogeneous highway traffic with online driver-behavior estimation and
//! risk-sensitive game-theoretic planning.
//!
//! - [`sim`]: IDM/MOBIL multi-lane simulation.
//! - [`graph`]: per-tick proximity graphs and the temporal Laplacian.
//! - [`behavior`]: centrality series, SLE/SIE and the scalar behavior score.
//! - [`calibration`]: behavior score to risk sensitivity mapping and clustering.
//! - [`game`]: risk-sensitive linear-quadratic dynamic games.
//! - [`planner`]: receding-horizon planning on top of the game solver.
//! - [`auction`]: bid-sorted turn orderings with truthful utilities.

pub mod auction;
pub mod behavior;
pub mod calibration;
pub mod game;
pub mod graph;
pub mod planner;
pub mod sim;
