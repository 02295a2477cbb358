use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use riskdrive_core::auction::{
    allocate, check_incentive_compatibility, check_welfare_optimality, exhaustive_deviations, AuctionInstance,
};
use riskdrive_core::behavior::{all_profiles, history_from_rows, tde, AnnotationSet};
use riskdrive_core::calibration::{cluster, fit, generate_training_set, theta_grid, GRID_STEP, THETA_BOUNDS};
use riskdrive_core::game::{solve_nash, LQGame, MatrixJson};
use riskdrive_core::graph::DEFAULT_MU;
use riskdrive_core::planner::run_highway_episode;
use riskdrive_core::sim::{spawn_with, Controls, SimConfigFile, Trajectory, TrajectoryRow};
use riskdrive_experiments::{mean_zeta, run_traffic, ExperimentConfig, ExperimentName, ExperimentSpec};
use riskdrive_session::{serve, SessionManager};
use serde_json::json;

const HISTORY_CAPACITY: usize = 4096;
const TOLERANCE: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "riskdrive", version, about = "Risk-aware highway simulation, behavior metrics and planning")]
struct Cli {
    /// TOML settings: a scenario file for `simulate`, experiment settings
    /// for `calibrate`, `plan` and `experiment`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run unplanned IDM/MOBIL traffic and export the trajectory.
    Simulate,
    /// Behavior profile of every agent in a trajectory CSV.
    Cmetric {
        trajectory: PathBuf,
        /// Frame period (s); inferred from the trajectory when omitted.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_MU)]
        mu: f64,
        /// Annotation CSV to score the time deviation error of `--agent`.
        #[arg(long, requires = "agent")]
        annotations: Option<PathBuf>,
        #[arg(long)]
        agent: Option<u32>,
    },
    /// Fit the CMetric-to-θ mapping and cluster simulated traffic.
    Calibrate {
        /// `zeta,theta` CSV to fit instead of generating training data.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Spacing of the generated θ training grid.
        #[arg(long, default_value_t = GRID_STEP)]
        step: f64,
        /// Traffic runs to cluster (0 skips clustering).
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Plan a highway episode at risk θ, or solve an LQ game given as JSON.
    Plan {
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        theta: f64,
        #[arg(long)]
        game: Option<PathBuf>,
    },
    /// Order agents by bid and verify truthfulness and welfare optimality.
    Auction {
        /// Instance JSON `{"bids": [...], "times": [...]}`.
        #[arg(long, conflicts_with_all = ["bids", "times"])]
        instance: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        bids: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Shuffled orderings compared when the instance is too large to enumerate.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Run a named experiment; exits non-zero unless every check passes.
    Experiment {
        name: ExperimentName,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Serve live driving sessions over a websocket at `/ws`.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Simulate => simulate(cli),
        Command::Cmetric { trajectory, dt, mu, annotations, agent } => {
            cmetric(cli, trajectory, *dt, *mu, annotations.as_deref(), *agent)
        }
        Command::Calibrate { pairs, step, seeds } => calibrate(cli, pairs.as_deref(), *step, *seeds),
        Command::Plan { theta, game } => match game {
            Some(path) => solve_game(cli, path),
            None => plan(cli, *theta),
        },
        Command::Auction { instance, bids, times, samples } => {
            let inst = match instance {
                Some(path) => AuctionInstance::from_json(&read(path)?)?,
                None => AuctionInstance::new(bids.clone(), times.clone())?,
            };
            auction(cli, &inst, *samples)
        }
        Command::Experiment { name, grid, seeds } => experiment(cli, *name, grid.clone(), *seeds),
        Command::Serve { addr } => {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
                log::info!("listening on ws://{}/ws, exports go to {}", listener.local_addr()?, cli.out.display());
                serve(listener, Arc::new(SessionManager::new(Some(cli.out.clone())))).await?;
                Ok(true)
            })
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(cli: &Cli, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let path = cli.out.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig> {
    match &cli.config {
        Some(path) => Ok(ExperimentConfig::from_toml(&read(path)?)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn simulate(cli: &Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => SimConfigFile::from_toml(&read(path)?)?,
        None => SimConfigFile::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.scenario.seed = seed;
    }
    let mut world = spawn_with(&cfg)?;
    let mut traj = Trajectory::default();
    traj.push_frame(world.rows());
    let controls = Controls::new();
    let mut events = Vec::new();
    for _ in 0..cfg.scenario.n_ticks() {
        for e in world.advance(&controls) {
            events.push(json!({ "tick": world.tick, "event": e }));
        }
        traj.push_frame(world.rows());
    }
    let count = |kind: &str| events.iter().filter(|e| e["event"]["kind"] == kind).count();
    let summary = json!({
        "seed": cfg.scenario.seed,
        "ticks": world.tick,
        "vehicles": world.vehicles.len(),
        "lane_changes": count("lane_change"),
        "collisions": count("collision"),
        "events": events,
    });
    write(cli, "trajectory.csv", traj.to_csv_string())?;
    write(cli, "simulation.json", serde_json::to_string_pretty(&summary)?)?;
    println!("{} ticks, {} vehicles, {} lane changes", world.tick, world.vehicles.len(), summary["lane_changes"]);
    Ok(true)
}

/// Frame period from the first two distinct frames.
fn infer_dt(rows: &[TrajectoryRow]) -> Option<f64> {
    let first = rows.first()?;
    let next = rows.iter().find(|r| r.frame != first.frame)?;
    Some((next.time_s - first.time_s) / (next.frame as f64 - first.frame as f64)).filter(|dt| *dt > 0.0)
}

fn cmetric(cli: &Cli, path: &Path, dt: Option<f64>, mu: f64, annotations: Option<&Path>, agent: Option<u32>) -> Result<bool> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let traj = Trajectory::read_csv(file)?;
    let dt = match dt.or_else(|| infer_dt(&traj.rows)) {
        Some(dt) => dt,
        None => bail!("cannot infer the frame period from {}; pass --dt", path.display()),
    };
    let history = history_from_rows(&traj.rows, mu, HISTORY_CAPACITY)?;
    let profiles = all_profiles(&history, dt);

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["agent_id", "zeta", "peak_frame", "window_start", "window_end"])?;
    let mut json_profiles = Vec::new();
    let mut skipped = BTreeMap::new();
    for (id, p) in &profiles {
        match p {
            Ok(p) => {
                let (a, b) = p.window;
                csv.write_record([id.to_string(), p.zeta.to_string(), p.peak_frame().to_string(), a.to_string(), b.to_string()])?;
                json_profiles.push(serde_json::to_value(p)?);
            }
            Err(e) => {
                skipped.insert(id.to_string(), e.to_string());
            }
        }
    }
    let mut report = json!({ "dt": dt, "mu": mu, "profiles": json_profiles, "skipped": skipped });
    if let (Some(ann_path), Some(id)) = (annotations, agent) {
        let ann = AnnotationSet::read_csv(File::open(ann_path).with_context(|| format!("opening {}", ann_path.display()))?)?;
        let profile = match profiles.get(&id) {
            Some(Ok(p)) => p,
            Some(Err(e)) => bail!("agent {id}: {e}"),
            None => bail!("agent {id} is not in the trajectory"),
        };
        let err = tde(profile, &ann)?;
        println!("agent {id}: peak frame {}, TDE {err} frames", profile.peak_frame());
        report["tde"] = json!({ "agent_id": id, "peak_frame": profile.peak_frame(), "tde_frames": err });
    }
    write(cli, "cmetric.csv", csv.into_inner()?)?;
    write(cli, "cmetric.json", serde_json::to_string_pretty(&report)?)?;
    println!("{} profiles, {} agents skipped", json_profiles.len(), skipped.len());
    Ok(true)
}

fn read_pairs(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut pairs = Vec::new();
    for row in r.deserialize() {
        let (zeta, theta): (f64, f64) = row?;
        pairs.push((zeta, theta));
    }
    Ok(pairs)
}

fn calibrate(cli: &Cli, pairs: Option<&Path>, step: f64, seeds: u64) -> Result<bool> {
    let cfg = experiment_config(cli)?;
    let pairs = match pairs {
        Some(path) => read_pairs(path)?,
        None => {
            let grid = theta_grid(THETA_BOUNDS, step);
            log::info!("generating training data on {} grid points", grid.len());
            generate_training_set(&grid, THETA_BOUNDS, |t| mean_zeta(&cfg.training, t))?
        }
    };
    let mapping = fit(&pairs, THETA_BOUNDS)?;
    println!("theta = {:.6} * zeta + {:.6} ({} pairs)", mapping.beta1, mapping.beta0, pairs.len());
    write(cli, "risk_mapping.json", mapping.to_json())?;
    if seeds > 0 {
        let first = cli.seed.unwrap_or(0);
        let mut thetas = Vec::new();
        for seed in first..first + seeds {
            thetas.extend(run_traffic(&cfg.training.traffic, &mapping, seed)?.into_iter().map(|(_, _, t)| t));
        }
        let clusters = cluster(&thetas, first)?;
        println!("centroids {:?} over {} agents", clusters.centroids, thetas.len());
        let mut out = Vec::new();
        clusters.write_csv(&thetas, &mut out)?;
        write(cli, "risk_clusters.csv", out)?;
    }
    Ok(true)
}

fn plan(cli: &Cli, theta: f64) -> Result<bool> {
    let cfg = experiment_config(cli)?.highway.with_seed(cli.seed.unwrap_or(0));
    let ep = run_highway_episode(&cfg, theta, &BTreeMap::new())?;
    let events: Vec<_> = ep.events.iter().map(|(t, e)| json!({ "tick": t, "event": e })).collect();
    let summary = json!({
        "theta": ep.theta,
        "seed": cfg.sim.scenario.seed,
        "ego_id": ep.ego_id,
        "lane_changes": ep.lane_changes,
        "overtakes": ep.overtakes,
        "max_speed_mps": ep.max_speed,
        "fallbacks": ep.fallbacks,
        "collisions": ep.collisions,
        "events": events,
    });
    write(cli, "plan_trajectory.csv", ep.trajectory.to_csv_string())?;
    write(cli, "plan.json", serde_json::to_string_pretty(&summary)?)?;
    println!(
        "theta {theta}: {} lane changes, {} overtakes, max speed {:.2} m/s, {} fallbacks",
        ep.lane_changes, ep.overtakes, ep.max_speed, ep.fallbacks
    );
    Ok(true)
}

fn solve_game(cli: &Cli, path: &Path) -> Result<bool> {
    let game = LQGame::from_json(&read(path)?)?;
    let sol = solve_nash(&game)?;
    let policies: Vec<Vec<_>> = sol
        .policies
        .iter()
        .map(|step| step.iter().map(|p| json!({ "gain": MatrixJson::from(&p.gain), "offset": p.offset.as_slice() })).collect())
        .collect();
    let report = json!({ "theta": game.theta, "breakdown": sol.breakdown, "policies": policies });
    write(cli, "nash.json", serde_json::to_string_pretty(&report)?)?;
    match sol.breakdown {
        Some(b) => {
            println!("neurotic breakdown: player {} at step {} ({:?})", b.player, b.step, b.reason);
            Ok(false)
        }
        None => {
            println!("solved {} players over {} steps", game.n_players(), game.horizon());
            Ok(true)
        }
    }
}

fn auction(cli: &Cli, inst: &AuctionInstance, samples: usize) -> Result<bool> {
    let result = allocate(inst)?;
    let incentive = (0..inst.k())
        .map(|agent| check_incentive_compatibility(inst, agent, &exhaustive_deviations(inst, agent)))
        .collect::<Result<Vec<_>, _>>()?;
    let welfare = check_welfare_optimality(inst, samples, cli.seed.unwrap_or(0))?;
    let truthful = incentive.iter().all(|r| r.holds(TOLERANCE));
    let optimal = welfare.holds(TOLERANCE);

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["slot", "agent", "bid", "time_s", "utility", "payment"])?;
    for (k, &agent) in result.ordering.iter().enumerate() {
        csv.write_record([
            k.to_string(),
            agent.to_string(),
            inst.bids[agent].to_string(),
            inst.times[k].to_string(),
            result.utilities[k].to_string(),
            result.payments[k].to_string(),
        ])?;
    }
    let report = json!({
        "instance": inst,
        "allocation": result,
        "incentive": incentive,
        "welfare_check": welfare,
        "truthful_dominant": truthful,
        "welfare_optimal": optimal,
    });
    write(cli, "auction.csv", csv.into_inner()?)?;
    write(cli, "auction.json", serde_json::to_string_pretty(&report)?)?;
    println!("ordering {:?}, utilities {:?}, welfare {}", result.ordering, result.utilities, result.welfare);
    println!("truthful bidding dominant: {truthful}; welfare optimal over {} orderings: {optimal}", welfare.orderings_checked);
    Ok(truthful && optimal)
}

fn experiment(cli: &Cli, name: ExperimentName, grid: Option<Vec<f64>>, seeds: Option<u64>) -> Result<bool> {
    let mut spec = ExperimentSpec::new(name).with_seed(cli.seed.unwrap_or(0));
    spec.config = experiment_config(cli)?;
    if let Some(grid) = grid {
        spec = spec.with_grid(grid);
    }
    if let Some(n) = seeds {
        spec = spec.with_seeds(n);
    }
    let report = riskdrive_experiments::run(&spec)?;
    let dir = cli.out.join(name.as_str());
    report.write(&dir)?;
    println!("{name}: {} records written to {}", report.records.len(), dir.display());
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(report.passed())
}
