use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskdrive_core::behavior::{behavior_profile, expected_aggressive_frame, history_from_rows, tde, AnnotationSet};
use riskdrive_core::graph::DEFAULT_MU;
use riskdrive_core::sim::{TrajectoryRow, VehicleClass};

use crate::{Check, ExperimentError, ExperimentSpec, MetricRecord, RunOutput};

const NAME: &str = "tde_eval";
const TOLERANCE: f64 = 1e-9;
const CUT_IN_DT: f64 = 0.1;

/// Expected frame by tallying every covered frame one at a time.
pub fn brute_force_expected_frame(intervals: &[(i64, i64)]) -> f64 {
    let mut tally: BTreeMap<i64, u64> = BTreeMap::new();
    for &(s, e) in intervals {
        for t in s..=e {
            *tally.entry(t).or_default() += 1;
        }
    }
    let (num, den) = tally.iter().fold((0.0, 0.0), |(n, d), (&t, &c)| (n + t as f64 * c as f64, d + c as f64));
    num / den
}

/// Two vehicles 15 m apart at equal speed; vehicle 1 moves from the next
/// lane in front of vehicle 0 over frames 9 to 11 (lateral offset 4, 4, 2,
/// 0 m at frames 8 to 11). The closeness of vehicle 0 is `1/d` with
/// `d = √(15² + y²)`, so its central difference peaks at frame 10:
/// `(1/15 − 1/√241)/(2·dt)` against `(1/√229 − 1/√241)/(2·dt)` at frame 9.
/// The two annotators mark frames 8..=11 and 9..=10, whose expected frame
/// is 57/6 = 9.5, a TDE of 0.5.
pub fn scripted_cut_in() -> (Vec<TrajectoryRow>, AnnotationSet) {
    let mut rows = Vec::new();
    for frame in 0..=20u64 {
        let time_s = frame as f64 * CUT_IN_DT;
        let x = 2.5 * frame as f64;
        let (lane, y) = match frame {
            0..=9 => (1, 4.0),
            10 => (0, 2.0),
            _ => (0, 0.0),
        };
        let row = |agent_id, lane, x_m, y_m| TrajectoryRow {
            frame,
            time_s,
            agent_id,
            lane,
            x_m,
            y_m,
            speed_mps: 25.0,
            class: VehicleClass::Conservative,
        };
        rows.push(row(0, 0, x, 0.0));
        rows.push(row(1, lane, x + 15.0, y));
    }
    let ann = AnnotationSet::from_intervals(&[(8, 11), (9, 10)]).expect("intervals are ordered");
    (rows, ann)
}

fn random_intervals(rng: &mut ChaCha8Rng) -> Vec<(i64, i64)> {
    let n = rng.random_range(1..=8);
    (0..n)
        .map(|_| {
            let s = rng.random_range(-50..500);
            (s, s + rng.random_range(0..120))
        })
        .collect()
}

pub(crate) fn run(spec: &ExperimentSpec) -> Result<RunOutput, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::new();
    let (mut worst, mut in_bounds) = (0.0f64, true);
    for k in 0..spec.seeds {
        let iv = random_intervals(&mut rng);
        let got = expected_aggressive_frame(&AnnotationSet::from_intervals(&iv)?)?;
        let want = brute_force_expected_frame(&iv);
        let lo = iv.iter().map(|p| p.0).min().unwrap() as f64;
        let hi = iv.iter().map(|p| p.1).max().unwrap() as f64;
        in_bounds &= (lo..=hi).contains(&got);
        worst = worst.max((got - want).abs());
        records.push(MetricRecord { seed: Some(k), tde_frames: Some((got - want).abs()), ..MetricRecord::new(NAME) });
    }

    let (rows, ann) = scripted_cut_in();
    let h = history_from_rows(&rows, DEFAULT_MU, 4096)?;
    let profile = behavior_profile(&h, 0, 0..h.graphs.len(), CUT_IN_DT)?;
    let scripted = tde(&profile, &ann)?;
    records.push(MetricRecord { agent_id: Some(0), tde_frames: Some(scripted), ..MetricRecord::new(NAME) });

    let checks = vec![
        Check::new(
            "expected_frame_matches_tally",
            worst <= TOLERANCE,
            format!("largest deviation {worst:.3e} frames over {} annotation sets", spec.seeds),
        ),
        Check::new("expected_frame_within_annotations", in_bounds, "expected frame lies in [min start, max end]"),
        Check::new(
            "scripted_cut_in_tde",
            (scripted - 0.5).abs() <= TOLERANCE,
            format!("peak frame {}, TDE {scripted} (expected 0.5)", profile.peak_frame()),
        ),
    ];
    Ok((records, checks, Vec::new()))
}
