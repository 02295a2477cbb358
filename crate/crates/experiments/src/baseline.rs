use rayon::prelude::*;
use riskdrive_core::planner::{merge_initial, MergeConfig, MergeInit, PlannerConfig};
use serde::{Deserialize, Serialize};

use crate::{grid_index, Check, ExperimentError, ExperimentSpec, MetricRecord, RunOutput};

const NAME: &str = "baseline_error";
/// Largest error reported for the behavior-unaware baseline (m).
pub const REFERENCE_MAX_ERROR: f64 = 0.0425;

/// Merge in which a risk-neutral ego (agent 0) plans around a human
/// (agent 1) that starts `human_lead` meters ahead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub merge: MergeConfig,
    pub human_lead: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let merge = MergeConfig::default();
        BaselineConfig {
            merge: MergeConfig { planner: PlannerConfig { speed_noise_gain: 0.002, ..merge.planner }, ..merge },
            human_lead: 10.0,
        }
    }
}

impl BaselineConfig {
    pub fn initial(&self, seed: u64) -> MergeInit {
        let mut init = merge_initial(&self.merge, seed);
        init.s[1] = init.s[0] + self.human_lead;
        init
    }
}

/// `|min distance(aware) − min distance(neutral)|` for each human θ: the
/// aware ego models the human at its true θ, the neutral ego at 0.
pub fn baseline_errors(cfg: &BaselineConfig, seed: u64, thetas: &[f64]) -> Result<Vec<f64>, ExperimentError> {
    let init = cfg.initial(seed);
    thetas
        .iter()
        .map(|&th| {
            let aware = cfg.merge.planned_min_distance(init, th, th)?;
            let neutral = cfg.merge.planned_min_distance(init, th, 0.0)?;
            Ok((aware - neutral).abs())
        })
        .collect()
}

pub(crate) fn run(spec: &ExperimentSpec) -> Result<RunOutput, ExperimentError> {
    let cfg = &spec.config.baseline;
    let seeds = spec.seed_list();
    let errors: Vec<Vec<f64>> =
        seeds.par_iter().map(|&s| baseline_errors(cfg, s, &spec.grid)).collect::<Result<_, ExperimentError>>()?;
    let mut records = Vec::new();
    for (s, errs) in seeds.iter().zip(&errors) {
        for (&th, &e) in spec.grid.iter().zip(errs) {
            records.push(MetricRecord { theta_a: Some(th), seed: Some(*s), error_m: Some(e), ..MetricRecord::new(NAME) });
        }
    }
    for (k, &th) in spec.grid.iter().enumerate() {
        let rmse = (errors.iter().map(|e| e[k] * e[k]).sum::<f64>() / errors.len() as f64).sqrt();
        records.push(MetricRecord { theta_a: Some(th), rmse_m: Some(rmse), ..MetricRecord::new(NAME) });
    }

    let mut checks = Vec::new();
    if let Some(zero) = grid_index(&spec.grid, 0.0) {
        let worst = errors.iter().map(|e| e[zero]).fold(0.0, f64::max);
        checks.push(Check::new("neutral_human_no_error", worst < 1e-3, format!("largest error at theta_human=0: {worst:.3e} m")));
    }
    let all: Vec<f64> = errors.iter().flatten().copied().collect();
    checks.push(Check::new("errors_non_negative", all.iter().all(|&e| e >= 0.0), format!("{} errors", all.len())));

    // Consecutive grid points by |θ|, compared within each seed.
    let mut order: Vec<usize> = (0..spec.grid.len()).collect();
    order.sort_by(|&a, &b| spec.grid[a].abs().total_cmp(&spec.grid[b].abs()));
    let (mut up, mut total) = (0, 0);
    for e in &errors {
        for w in order.windows(2) {
            total += 1;
            up += (e[w[1]] > e[w[0]]) as usize;
        }
    }
    if total > 0 {
        let frac = up as f64 / total as f64;
        checks.push(Check::new(
            "error_grows_with_risk",
            frac >= 0.8,
            format!("error strictly increases in {up}/{total} consecutive comparisons ({:.0}%)", 100.0 * frac),
        ));
    }
    let max = all.iter().copied().fold(0.0, f64::max);
    checks.push(Check::new(
        "error_positive_away_from_neutral",
        spec.grid.iter().all(|&t| t == 0.0) || max > 0.0,
        format!("max error {max:.4} m (reported reference {REFERENCE_MAX_ERROR} m)"),
    ));
    Ok((records, checks, Vec::new()))
}
