use std::collections::BTreeMap;

use rayon::prelude::*;
use riskdrive_core::behavior::{all_profiles, behavior_profile, history_from_rows};
use riskdrive_core::calibration::{cluster, fit, generate_training_set, map_to_theta, RiskLabel, RiskMapping, THETA_BOUNDS};
use riskdrive_core::graph::DEFAULT_MU;
use riskdrive_core::planner::{run_highway_episode, HighwayEpisodeConfig};
use riskdrive_core::sim::{spawn_with, Controls, SimConfigFile, Trajectory};
use serde::{Deserialize, Serialize};

use crate::{Artifact, Check, ExperimentError, ExperimentSpec, MetricRecord, RunOutput};

const NAME: &str = "kmeans_fit";
const HISTORY_CAPACITY: usize = 4096;

/// Scenarios averaged into one training point, plus the mixed traffic the
/// fitted mapping is applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub episode: HighwayEpisodeConfig,
    /// `(lanes, vehicles)` per training scenario.
    pub layouts: Vec<(usize, usize)>,
    pub training_seed: u64,
    pub traffic: SimConfigFile,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            episode: HighwayEpisodeConfig::default(),
            layouts: vec![(2, 8), (3, 12), (4, 16)],
            training_seed: 7,
            traffic: SimConfigFile::default(),
        }
    }
}

/// Mean CMetric of a planner ego at `theta` over the training layouts;
/// `None` if any episode fails or falls back to its default control.
pub fn mean_zeta(cfg: &TrainingConfig, theta: f64) -> Option<f64> {
    let mut total = 0.0;
    for &(lanes, n) in &cfg.layouts {
        let mut ep = cfg.episode.with_seed(cfg.training_seed);
        ep.sim.scenario.n_lanes = lanes;
        ep.sim.scenario.n_vehicles = n;
        let r = run_highway_episode(&ep, theta, &BTreeMap::new()).ok()?;
        if r.fallbacks > 0 {
            return None;
        }
        let h = history_from_rows(&r.trajectory.rows, DEFAULT_MU, HISTORY_CAPACITY).ok()?;
        total += behavior_profile(&h, r.ego_id, 0..h.graphs.len(), ep.sim.scenario.tick_dt).ok()?.zeta;
    }
    (!cfg.layouts.is_empty()).then(|| total / cfg.layouts.len() as f64)
}

/// Simulates unplanned traffic for `seed` and maps every agent's CMetric
/// through `mapping`. Returns `(agent, zeta, theta)` rows.
pub fn run_traffic(cfg: &SimConfigFile, mapping: &RiskMapping, seed: u64) -> Result<Vec<(u32, f64, f64)>, ExperimentError> {
    let mut cfg = cfg.clone();
    cfg.scenario.seed = seed;
    let mut world = spawn_with(&cfg)?;
    let mut traj = Trajectory::default();
    traj.push_frame(world.rows());
    let controls = Controls::new();
    for _ in 0..cfg.scenario.n_ticks() {
        world.advance(&controls);
        traj.push_frame(world.rows());
    }
    let h = history_from_rows(&traj.rows, DEFAULT_MU, HISTORY_CAPACITY)?;
    let mut out = Vec::new();
    for (id, p) in all_profiles(&h, cfg.scenario.tick_dt) {
        match p {
            Ok(p) => out.push((id, p.zeta, map_to_theta(mapping, p.zeta).theta)),
            Err(e) => log::warn!("seed {seed} agent {id}: {e}"),
        }
    }
    Ok(out)
}

pub(crate) fn run(spec: &ExperimentSpec) -> Result<RunOutput, ExperimentError> {
    let cfg = &spec.config.training;
    let pairs = generate_training_set(&spec.grid, THETA_BOUNDS, |t| mean_zeta(cfg, t))?;
    let mapping = fit(&pairs, THETA_BOUNDS)?;

    let per_seed: Vec<Vec<(u32, f64, f64)>> = spec
        .seed_list()
        .par_iter()
        .map(|&s| run_traffic(&cfg.traffic, &mapping, s))
        .collect::<Result<_, _>>()?;
    let points: Vec<(u64, u32, f64, f64)> = spec
        .seed_list()
        .into_iter()
        .zip(&per_seed)
        .flat_map(|(s, rows)| rows.iter().map(move |&(id, z, t)| (s, id, z, t)))
        .collect();
    let thetas: Vec<f64> = points.iter().map(|p| p.3).collect();
    let clusters = cluster(&thetas, spec.seed)?;

    let mut records: Vec<MetricRecord> = pairs
        .iter()
        .map(|&(z, t)| MetricRecord { theta_a: Some(t), zeta: Some(z), ..MetricRecord::new(NAME) })
        .collect();
    for (k, &(s, id, z, t)) in points.iter().enumerate() {
        records.push(MetricRecord {
            theta_a: Some(t),
            seed: Some(s),
            agent_id: Some(id),
            zeta: Some(z),
            cluster_label: Some(clusters.label_of(k).as_str().to_string()),
            ..MetricRecord::new(NAME)
        });
    }

    let mut cluster_csv = Vec::new();
    clusters.write_csv(&thetas, &mut cluster_csv)?;
    let artifacts = vec![
        Artifact { file_name: "risk_mapping.json".into(), contents: mapping.to_json() },
        Artifact { file_name: "risk_clusters.csv".into(), contents: String::from_utf8(cluster_csv).expect("csv is utf-8") },
    ];

    let dropped = spec.grid.len() - pairs.len();
    let checks = vec![
        Check::new(
            "mapping_slope_negative",
            mapping.beta1 < 0.0,
            format!("beta1={:.4} beta0={:.4} from {} pairs ({dropped} dropped)", mapping.beta1, mapping.beta0, pairs.len()),
        ),
        Check::new(
            "four_ordered_clusters",
            clusters.centroids.len() == 4
                && clusters.centroids.windows(2).all(|w| w[0] > w[1])
                && clusters.labels == RiskLabel::ORDER,
            format!("centroids {:?} over {} agents", clusters.centroids, thetas.len()),
        ),
    ];
    Ok((records, checks, artifacts))
}
