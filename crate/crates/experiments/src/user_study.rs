use std::collections::BTreeMap;

use rayon::prelude::*;
use riskdrive_core::planner::{EpisodeResult, OvertakeSceneConfig};

use crate::{Artifact, Check, ExperimentError, ExperimentSpec, MetricRecord, RunOutput};

pub const THETA_SEEKING: f64 = -2.429;
pub const THETA_AVERSE: f64 = 3.651;

const NAME: &str = "user_study_pair";

fn episode(cfg: &OvertakeSceneConfig, seed: u64, theta: f64) -> Result<EpisodeResult, ExperimentError> {
    Ok(cfg.run(seed, theta, &BTreeMap::new())?)
}

/// Runs the seeking and averse egos on matched overtaking scenes and
/// exports the pair for `spec.seed`.
pub(crate) fn run(spec: &ExperimentSpec) -> Result<RunOutput, ExperimentError> {
    let cfg = &spec.config.overtake;
    let (seeking, averse) = (spec.grid[0], spec.grid[1]);
    let pairs: Vec<(u64, EpisodeResult, EpisodeResult)> = spec
        .seed_list()
        .par_iter()
        .map(|&s| Ok((s, episode(cfg, s, seeking)?, episode(cfg, s, averse)?)))
        .collect::<Result<_, ExperimentError>>()?;

    let mut records = Vec::new();
    for (s, a, b) in &pairs {
        for (theta, ep) in [(seeking, a), (averse, b)] {
            records.push(MetricRecord {
                theta_a: Some(theta),
                seed: Some(*s),
                agent_id: Some(ep.ego_id),
                lane_change_count: Some(ep.lane_changes as u64),
                overtakes: Some(ep.overtakes as u64),
                max_speed_mps: Some(ep.max_speed),
                ..MetricRecord::new(NAME)
            });
        }
    }

    let (_, a, b) = &pairs[0];
    let seeking_csv = a.trajectory.to_csv_string();
    let averse_csv = b.trajectory.to_csv_string();
    let metadata = serde_json::json!({
        "theta_seeking": seeking,
        "theta_averse": averse,
        "seed": spec.seed,
        "ego_id": a.ego_id,
        "tick_dt": cfg.tick_dt,
        "seeking": { "file": "user_study_seeking.csv", "overtakes": a.overtakes, "lane_changes": a.lane_changes, "max_speed_mps": a.max_speed },
        "averse": { "file": "user_study_averse.csv", "overtakes": b.overtakes, "lane_changes": b.lane_changes, "max_speed_mps": b.max_speed },
    });

    let again = episode(cfg, spec.seed, seeking)?.trajectory.to_csv_string();
    let faster = pairs.iter().filter(|(_, a, b)| a.max_speed >= b.max_speed).count();
    let checks = vec![
        Check::new(
            "export_shows_overtake_and_lane_keeping",
            a.overtakes >= 1 && b.lane_changes == 0,
            format!(
                "seed {}: seeking {} overtakes, averse {} lane changes{}",
                spec.seed,
                a.overtakes,
                b.lane_changes,
                if a.overtakes >= 1 && b.lane_changes == 0 { "" } else { "; flagged for seed review" }
            ),
        ),
        Check::new(
            "seeking_reaches_higher_speed",
            faster == pairs.len(),
            format!("seeking max speed >= averse max speed in {faster}/{} seeds", pairs.len()),
        ),
        Check::new("export_deterministic", again == seeking_csv, format!("rerun of seed {} is byte-identical", spec.seed)),
    ];
    let artifacts = vec![
        Artifact { file_name: "user_study_seeking.csv".into(), contents: seeking_csv },
        Artifact { file_name: "user_study_averse.csv".into(), contents: averse_csv },
        Artifact { file_name: "user_study_pair.json".into(), contents: serde_json::to_string_pretty(&metadata)? },
    ];
    Ok((records, checks, artifacts))
}
