use riskdrive_core::behavior::{behavior_profile, history_from_rows};
use riskdrive_core::graph::DEFAULT_MU;
use riskdrive_core::sim::{SimEvent, Trajectory};
use riskdrive_session::*;

fn session(seed: u64) -> Session {
    Session::new(1, SessionConfig { seed, ..Default::default() }).unwrap()
}

/// Accelerates every tick and alternates lane changes every `weave` ticks.
fn aggressive_stream(s: &mut Session, tick: u64, seq: &mut u64, weave: u64) {
    *seq += 1;
    s.push_control(ControlInput { action: Action::Accelerate, seq: *seq }).unwrap();
    if tick % weave == 0 {
        *seq += 1;
        let action = if (tick / weave) % 2 == 0 { Action::LaneLeft } else { Action::LaneRight };
        s.push_control(ControlInput { action, seq: *seq }).unwrap();
    }
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)` by direct summation.
fn sign_p(k: u64, n: u64) -> f64 {
    let mut c = 1.0;
    let mut total = 0.0;
    for j in 0..=n {
        if j > 0 {
            c = c * (n - j + 1) as f64 / j as f64;
        }
        if j >= k {
            total += c;
        }
    }
    total / 2f64.powi(n as i32)
}

#[test]
fn idle_human_follows_idm_and_ticks_emit_state() {
    let mut s = session(3);
    for k in 1..=40 {
        let u = s.tick().unwrap();
        assert_eq!(u.tick, k);
        assert_eq!(u.sim_time_s, k as f64 * s.config.tick_dt);
        assert_eq!(u.vehicles.len(), s.world.vehicles.len());
        assert!(u.applied.is_empty());
    }
    let human = s.world.vehicle(s.human_id).unwrap();
    assert_eq!(human.state.lane, 1);
    assert!(human.state.v > 0.0);
}

#[test]
fn window_and_refresh_cadence() {
    let mut s = session(4);
    let cfg = SessionConfig::default();
    assert_eq!(cfg.window_ticks(), 75);
    assert_eq!(cfg.refresh_ticks(), 15);
    let mut last = Some(LiveMetrics::default());
    for _ in 0..150 {
        let u = s.tick().unwrap();
        if u.tick % 15 != 0 {
            assert_eq!(Some(&u.metrics), last.as_ref(), "metrics change only on refresh ticks");
        }
        if let Some((a, b)) = u.metrics.window {
            assert!(b - a < 75);
            assert_eq!(b, u.tick - u.tick % 15);
        }
        last = Some(u.metrics);
    }
    let m = last.unwrap();
    assert!(m.zeta.is_some() && m.theta.is_some() && m.cluster.is_some() && m.sle.is_some() && m.sie.is_some());
}

#[test]
fn each_control_affects_exactly_one_tick() {
    let mut s = session(5);
    for seq in 1..=4 {
        s.push_control(ControlInput { action: Action::Accelerate, seq }).unwrap();
    }
    s.push_control(ControlInput { action: Action::LaneLeft, seq: 5 }).unwrap();
    let applied: Vec<Vec<u64>> = (0..6).map(|_| s.tick().unwrap().applied).collect();
    assert_eq!(applied, vec![vec![1], vec![2], vec![3], vec![4, 5], vec![], vec![]]);

    // Brake then accelerate: each offset lasts one tick.
    let mut a = session(6);
    let mut b = session(6);
    a.push_control(ControlInput { action: Action::Brake, seq: 1 }).unwrap();
    a.tick().unwrap();
    b.tick().unwrap();
    let (va, vb) = (a.world.vehicle(a.human_id).unwrap().state.v, b.world.vehicle(b.human_id).unwrap().state.v);
    assert!((vb - va - 2.0 / TICK_HZ).abs() < 1e-9, "{va} {vb}");
}

#[test]
fn unsafe_lane_change_is_rejected() {
    let mut s = session(7);
    let human = s.human_id;
    // Park a vehicle right beside the human in the left lane.
    let (x, lane) = {
        let h = s.world.vehicle(human).unwrap();
        (h.state.x, h.state.lane)
    };
    let other = s.world.vehicles.iter().position(|v| v.state.id != human && v.state.id != s.ego_id).unwrap();
    let center = s.world.road.lane_center(lane + 1);
    let v = &mut s.world.vehicles[other].state;
    v.x = x - 2.0;
    v.lane = lane + 1;
    v.y = center;
    s.push_control(ControlInput { action: Action::LaneLeft, seq: 1 }).unwrap();
    let u = s.tick().unwrap();
    assert!(u.events.iter().any(|e| matches!(e, SimEvent::RejectedUnsafe { id, .. } if *id == human)), "{:?}", u.events);
    assert_eq!(s.world.vehicle(human).unwrap().state.lane, lane);
    let json = serde_json::to_value(&u.events).unwrap();
    assert!(json.as_array().unwrap().iter().any(|e| e["kind"] == "rejected_unsafe"));
}

#[test]
fn empty_session_exports_are_valid() {
    let mut s = session(8);
    let e = s.stop().unwrap();
    assert_eq!(e.ticks, 0);
    assert!(Trajectory::read_csv(e.trajectory_csv.as_bytes()).unwrap().rows.is_empty());
    assert_eq!(e.profile_json(), "null");
    assert!(matches!(s.stop(), Err(SessionError::Stopped(_))));
    assert!(s.tick().is_err());
}

#[test]
fn manager_lifecycle_and_isolation() {
    let dir = tempfile::tempdir().unwrap();
    let m = SessionManager::new(Some(dir.path().to_path_buf()));
    let a = m.start(SessionConfig { seed: 1, ..Default::default() }).unwrap();
    let b = m.start(SessionConfig { seed: 1, ..Default::default() }).unwrap();
    let c = m.start(SessionConfig { seed: 2, ..Default::default() }).unwrap();
    assert_ne!(a, b);
    m.control(a, ControlInput { action: Action::Accelerate, seq: 1 }).unwrap();
    for _ in 0..10 {
        m.tick(a).unwrap();
        m.tick(b).unwrap();
    }
    let (ea, fa) = m.stop(a).unwrap();
    let (eb, _) = m.stop(b).unwrap();
    assert_ne!(ea.trajectory_csv, eb.trajectory_csv, "controls of one session leak into another");
    assert_eq!(m.get(c).unwrap().lock().unwrap().tick_count(), 0);
    let files = fa.unwrap();
    assert_eq!(std::fs::read_to_string(&files[0]).unwrap(), ea.trajectory_csv);
    assert!(matches!(m.stop(a), Err(SessionError::UnknownSession(_))));
    assert!(matches!(m.tick(a), Err(SessionError::UnknownSession(_))));
    assert!(m.start(SessionConfig { tick_dt: 0.0, ..Default::default() }).is_err());
    assert_eq!(m.ids(), vec![c]);
}

#[test]
fn live_zeta_matches_offline_recomputation() {
    for seed in 0..10 {
        let mut s = session(seed);
        let mut seq = 0;
        let mut refreshes = Vec::new();
        for t in 0..240 {
            match seed % 3 {
                0 => {}
                1 => aggressive_stream(&mut s, t, &mut seq, 30),
                _ if t % 20 == 0 => {
                    seq += 1;
                    s.push_control(ControlInput { action: Action::Brake, seq }).unwrap();
                }
                _ => {}
            }
            let u = s.tick().unwrap();
            if let (Some(z), Some(w)) = (u.metrics.zeta, u.metrics.window) {
                if u.tick % 15 == 0 {
                    refreshes.push((w, z));
                }
            }
        }
        let human = s.human_id;
        let export = s.stop().unwrap();
        let rows = Trajectory::read_csv(export.trajectory_csv.as_bytes()).unwrap().rows;
        let h = history_from_rows(&rows, DEFAULT_MU, HISTORY_CAPACITY).unwrap();
        assert!(!refreshes.is_empty());
        for ((a, b), z) in refreshes {
            let start = h.graphs.iter().position(|g| g.t == a).unwrap();
            let end = h.graphs.iter().position(|g| g.t == b).unwrap() + 1;
            let offline = behavior_profile(&h, human, start..end, 1.0 / TICK_HZ).unwrap().zeta;
            assert!((offline - z).abs() <= 1e-9, "seed {seed} window {a}..{b}: live {z} offline {offline}");
        }
        let final_profile = export.profile.unwrap();
        assert_eq!(final_profile.agent_id, human);
    }
}

#[test]
fn aggressive_driving_lowers_reported_theta() {
    let mean_theta = |seed: u64, aggressive: bool| {
        let mut s = session(seed);
        let (mut seq, mut thetas) = (0, Vec::new());
        for t in 0..600 {
            if aggressive {
                aggressive_stream(&mut s, t, &mut seq, 30);
            }
            let u = s.tick().unwrap();
            if u.tick % 15 == 0 {
                thetas.extend(u.metrics.theta);
            }
        }
        thetas.iter().sum::<f64>() / thetas.len() as f64
    };
    let (mut wins, mut losses) = (0, 0);
    for seed in 0..20 {
        let (idle, aggr) = (mean_theta(seed, false), mean_theta(seed, true));
        if aggr < idle {
            wins += 1;
        } else if aggr > idle {
            losses += 1;
        }
    }
    let p = sign_p(wins, wins + losses);
    assert!(wins > losses && p < 0.05, "wins {wins} losses {losses} p {p}");
}
