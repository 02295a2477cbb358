use rayon::prelude::*;
use riskdrive_core::planner::{merge_initial, run_merge, MergeAgent, MergeOutcome};

use crate::{grid_index, Check, ExperimentError, ExperimentName, ExperimentSpec, MetricRecord, RunOutput, SignTest, ALPHA};

/// Both agents know each other's risk parameter.
fn agents(a: f64, b: f64) -> [MergeAgent; 2] {
    [MergeAgent { theta: a, other_theta: b }, MergeAgent { theta: b, other_theta: a }]
}

pub(crate) fn run(spec: &ExperimentSpec) -> Result<RunOutput, ExperimentError> {
    let cfg = &spec.config.merge;
    let name = spec.name.as_str();
    let g = spec.grid.len();
    let seeds = spec.seed_list();
    let n = seeds.len();
    let cells: Vec<(usize, usize, u64)> =
        (0..g).flat_map(|i| (0..g).flat_map(move |j| (0..n).map(move |s| (i, j, s as u64)))).collect();
    let outcomes: Vec<Result<MergeOutcome, String>> = cells
        .par_iter()
        .map(|&(i, j, s)| {
            let init = merge_initial(cfg, seeds[s as usize]);
            run_merge(cfg, init, agents(spec.grid[i], spec.grid[j])).map_err(|e| e.to_string())
        })
        .collect();
    let records: Vec<MetricRecord> = cells
        .iter()
        .zip(&outcomes)
        .map(|(&(i, j, s), o)| {
            let mut r = MetricRecord {
                theta_a: Some(spec.grid[i]),
                theta_b: Some(spec.grid[j]),
                seed: Some(seeds[s as usize]),
                ..MetricRecord::new(name)
            };
            match o {
                Ok(o) => {
                    r.min_distance_m = Some(o.min_distance);
                    r.yielded = Some(o.yielded == Some(0) || o.first.is_none());
                }
                Err(e) => r.skipped = Some(e.clone()),
            }
            r
        })
        .collect();
    let cell = |i: usize, j: usize| &records[(i * g + j) * n..(i * g + j + 1) * n];

    let mut checks = Vec::new();
    if let (Some(averse), Some(seeking)) = (grid_index(&spec.grid, 3.0), grid_index(&spec.grid, -3.0)) {
        if spec.name == ExperimentName::MergeDistance {
            let pairs = cell(averse, averse)
                .iter()
                .zip(cell(seeking, seeking))
                .filter_map(|(a, b)| Some((a.min_distance_m?, b.min_distance_m?)));
            let t = SignTest::greater(pairs);
            checks.push(Check::new(
                "averse_pairs_keep_larger_distance",
                t.significant(ALPHA),
                format!("min distance (+3,+3) > (-3,-3) in {}/{} seeds ({} ties), p={:.2e}", t.wins, n, t.ties, t.p_value),
            ));
        } else {
            let yields: Vec<bool> = cell(averse, seeking).iter().filter_map(|r| r.yielded).collect();
            let wins = yields.iter().filter(|&&y| y).count();
            let t = SignTest::from_outcomes(wins, yields.len() - wins, 0);
            checks.push(Check::new(
                "averse_agent_yields",
                2 * wins > yields.len() && t.significant(ALPHA),
                format!("averse agent yields to seeking agent in {wins}/{} seeds, p={:.2e}", yields.len(), t.p_value),
            ));
        }
    }

    // Relabeling: (b, a) from the mirrored start mirrors (a, b).
    if let Some(&(i, j, s)) = cells.iter().find(|c| spec.grid[c.0] != spec.grid[c.1]) {
        let init = merge_initial(cfg, seeds[s as usize]);
        let direct = run_merge(cfg, init, agents(spec.grid[i], spec.grid[j]))?;
        let mirrored = run_merge(cfg, init.mirrored(), agents(spec.grid[j], spec.grid[i]))?;
        let ok = direct.min_distance.to_bits() == mirrored.min_distance.to_bits()
            && direct.first == mirrored.first.map(|f| 1 - f);
        checks.push(Check::new(
            "relabeling_symmetry",
            ok,
            format!("({}, {}) seed {}: min distance {} vs {}", spec.grid[i], spec.grid[j], seeds[s as usize], direct.min_distance, mirrored.min_distance),
        ));
    }
    Ok((records, checks, Vec::new()))
}
