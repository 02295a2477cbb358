use std::fs;

use riskdrive_core::behavior::{behavior_profile, history_from_rows, tde};
use riskdrive_core::graph::DEFAULT_MU;
use riskdrive_experiments::*;

#[test]
fn names_parse_and_display() {
    for n in ExperimentName::ALL {
        assert_eq!(n.as_str().parse::<ExperimentName>().unwrap(), n);
        assert_eq!(n.to_string(), n.as_str());
    }
    assert!("lane_change".parse::<ExperimentName>().is_err());
}

#[test]
fn default_specs_are_valid_and_reject_bad_input() {
    for n in ExperimentName::ALL {
        ExperimentSpec::new(n).validate().unwrap();
    }
    let spec = ExperimentSpec::new(ExperimentName::UserStudyPair);
    assert_eq!(spec.grid, vec![THETA_SEEKING, THETA_AVERSE]);
    assert!(spec.clone().with_grid(vec![0.0]).validate().is_err());
    assert!(ExperimentSpec::new(ExperimentName::LaneChanges).with_seeds(0).validate().is_err());
    assert!(ExperimentSpec::new(ExperimentName::LaneChanges).with_grid(vec![f64::NAN]).validate().is_err());
    assert!(ExperimentSpec::new(ExperimentName::MergeYield).with_grid(vec![]).validate().is_err());
    assert_eq!(ExperimentSpec::new(ExperimentName::LaneChanges).with_seed(5).with_seeds(3).seed_list(), vec![5, 6, 7]);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    let partial = ExperimentConfig::from_toml("[baseline]\nhuman_lead = 12.0\n").unwrap();
    assert_eq!(partial.baseline.human_lead, 12.0);
    assert_eq!(partial.merge, cfg.merge);
    assert!(ExperimentConfig::from_toml("[baseline]\nhuman_lead = \"far\"\n").is_err());
}

#[test]
fn brute_force_tally_on_hand_cases() {
    assert_eq!(brute_force_expected_frame(&[(4, 4)]), 4.0);
    assert_eq!(brute_force_expected_frame(&[(0, 2), (2, 4)]), 2.0);
    assert_eq!(brute_force_expected_frame(&[(8, 11), (9, 10)]), 9.5);
}

#[test]
fn scripted_cut_in_scores_half_a_frame() {
    let (rows, ann) = scripted_cut_in();
    let h = history_from_rows(&rows, DEFAULT_MU, 4096).unwrap();
    let p = behavior_profile(&h, 0, 0..h.graphs.len(), 0.1).unwrap();
    assert_eq!(p.peak_frame(), 10);
    let c = |y: f64| 1.0 / (225.0 + y * y).sqrt();
    let peak = (c(0.0) - c(4.0)) / 0.2;
    assert!((p.sle.closeness.iter().copied().fold(0.0, f64::max) - peak).abs() < 1e-12);
    assert_eq!(tde(&p, &ann).unwrap(), 0.5);
}

#[test]
fn tde_eval_passes_and_writes_outputs() {
    let report = run(&ExperimentSpec::new(ExperimentName::TdeEval).with_seeds(200)).unwrap();
    assert!(report.passed(), "{:?}", report.checks);
    assert_eq!(report.records.len(), 201);
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let csv = fs::read(dir.path().join("tde_eval.csv")).unwrap();
    assert_eq!(read_csv(csv.as_slice()).unwrap(), report.records);
    let json = fs::read_to_string(dir.path().join("tde_eval.json")).unwrap();
    assert_eq!(from_json(&json).unwrap(), report.records);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("tde_eval_report.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
}

#[test]
fn merge_distance_small_matrix() {
    let spec = ExperimentSpec::new(ExperimentName::MergeDistance).with_grid(vec![-3.0, 3.0]).with_seeds(8);
    let report = run(&spec).unwrap();
    assert_eq!(report.records.len(), 2 * 2 * 8);
    assert!(report.check("relabeling_symmetry").unwrap().passed);
    assert!(report.check("averse_pairs_keep_larger_distance").unwrap().passed, "{:?}", report.checks);
    assert!(report.records.iter().all(|r| r.min_distance_m.is_some() && r.yielded.is_some()));
}

#[test]
fn baseline_error_small_grid() {
    let spec = ExperimentSpec::new(ExperimentName::BaselineError).with_seeds(3);
    let report = run(&spec).unwrap();
    assert!(report.passed(), "{:?}", report.checks);
    let summaries: Vec<_> = report.records.iter().filter(|r| r.seed.is_none()).collect();
    assert_eq!(summaries.len(), 4);
    assert!(summaries.iter().all(|r| r.rmse_m.is_some()));
    let cfg = BaselineConfig::default();
    let errs = baseline_errors(&cfg, 0, &[0.0, 3.0]).unwrap();
    assert!(errs[0] < 1e-3 && errs[1] > errs[0]);
}

#[test]
fn experiments_are_reproducible() {
    let spec = ExperimentSpec::new(ExperimentName::MergeYield).with_grid(vec![-3.0, 3.0]).with_seeds(2).with_seed(11);
    let a = run(&spec).unwrap();
    let b = run(&spec).unwrap();
    assert_eq!(to_json(&a.records), to_json(&b.records));
}
