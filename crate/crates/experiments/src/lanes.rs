use std::collections::BTreeMap;

use rayon::prelude::*;
use riskdrive_core::planner::run_highway_episode;

use crate::{grid_index, Check, ExperimentError, ExperimentSpec, MetricRecord, RunOutput, SignTest, ALPHA};

const NAME: &str = "lane_changes";

pub(crate) fn run(spec: &ExperimentSpec) -> Result<RunOutput, ExperimentError> {
    let cfg = &spec.config.highway;
    let cells: Vec<(f64, u64)> = spec.grid.iter().flat_map(|&t| spec.seed_list().into_iter().map(move |s| (t, s))).collect();
    let records: Vec<MetricRecord> = cells
        .par_iter()
        .map(|&(theta, seed)| {
            let mut r = MetricRecord { theta_a: Some(theta), seed: Some(seed), ..MetricRecord::new(NAME) };
            match run_highway_episode(&cfg.with_seed(seed), theta, &BTreeMap::new()) {
                Ok(ep) => {
                    r.lane_change_count = Some(ep.lane_changes as u64);
                    r.overtakes = Some(ep.overtakes as u64);
                    r.max_speed_mps = Some(ep.max_speed);
                }
                Err(e) => r.skipped = Some(e.to_string()),
            }
            r
        })
        .collect();

    let mut checks = Vec::new();
    if let (Some(seeking), Some(averse)) = (grid_index(&spec.grid, -3.0), grid_index(&spec.grid, 3.0)) {
        let n = spec.seeds as usize;
        let count = |k: usize| -> Vec<Option<f64>> {
            records[k * n..(k + 1) * n].iter().map(|r| r.lane_change_count.map(|c| c as f64)).collect()
        };
        let (a, b) = (count(seeking), count(averse));
        let pairs: Vec<(f64, f64)> = a.iter().zip(&b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
        let mean = |v: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| v.iter().map(f).sum::<f64>() / v.len().max(1) as f64;
        let (ma, mb) = (mean(&pairs, |p| p.0), mean(&pairs, |p| p.1));
        let t = SignTest::greater(pairs.iter().copied());
        checks.push(Check::new(
            "seeking_changes_more_lanes",
            ma > mb && t.significant(ALPHA),
            format!(
                "mean lane changes {ma:.2} (theta=-3) vs {mb:.2} (theta=+3) over {} seeds; sign test {}/{}/{} p={:.2e}",
                pairs.len(),
                t.wins,
                t.losses,
                t.ties,
                t.p_value
            ),
        ));
    }

    let mut empty = cfg.with_seed(spec.seed);
    empty.sim.scenario.n_vehicles = 0;
    let ep = run_highway_episode(&empty, 5.0, &BTreeMap::new())?;
    checks.push(Check::new("averse_empty_road_keeps_lane", ep.lane_changes == 0, format!("{} lane changes at theta=+5", ep.lane_changes)));

    let (theta, seed) = cells[0];
    let again = run_highway_episode(&cfg.with_seed(seed), theta, &BTreeMap::new())?;
    let same = records[0].lane_change_count == Some(again.lane_changes as u64);
    checks.push(Check::new("deterministic", same, format!("theta={theta} seed={seed} rerun gives {} lane changes", again.lane_changes)));
    Ok((records, checks, Vec::new()))
}
