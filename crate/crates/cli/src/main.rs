use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bilinear_mpc::kkt::KktSystem;
use bilinear_mpc::mpqp::{default_sample_box, validate_map, MapFile};
use bilinear_mpc::problem::{ProblemFile, SplitProblem};
use bilinear_mpc::sensitivity::evaluate;
use bilinear_mpc::sim::models::{building_model, motor_model, BUILDING_STEP_MINUTES, MOTOR_DT, SPEED_BAND};
use bilinear_mpc::sim::weather::bundled_winter_day;
use bilinear_mpc::sim::{
    building_plant, load_disturbance_csv, monte_carlo, motor_plant, run_closed_loop, window_open, MonteCarloConfig,
    MonteCarloReport, Reference, ScenarioConfig,
};
use bilinear_mpc::solver::{Controller, SolveStatus, Solver, SolverConfig};
use bilinear_mpc::stage::{StageMaps, WORKERS_ENV};
use bilinear_mpc::Problem;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::json;

#[derive(Parser)]
#[command(name = "bmpc", version, about = "Bilinear MPC solver and case-study simulations")]
struct Cli {
    /// Threads for the stage solves (1 = inline, 0 = all cores).
    #[arg(long, global = true, env = WORKERS_ENV, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem from a JSON description.
    Solve(SolveArgs),
    /// Build or check explicit stage maps.
    #[command(subcommand)]
    Mpqp(MpqpCommand),
    /// Closed-loop simulation of a bundled case study.
    Simulate(SimulateArgs),
    /// Building Monte-Carlo timing table over several tolerances.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SolveArgs {
    problem: PathBuf,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    x0: Vec<f64>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Result JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-iteration telemetry as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Coupled KKT matrix at the returned iterate, as triplets.
    #[arg(long)]
    dump_kkt: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MpqpCommand {
    /// Enumerate the stage map of a problem and save it.
    Build {
        problem: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        /// Stage whose map is written.
        #[arg(long, default_value_t = 1)]
        stage: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a saved map with the active-set QP solver on random parameters.
    Check {
        map: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-7)]
        threshold: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Plant {
    Building,
    Motor,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(value_enum)]
    plant: Plant,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Steps per episode (default: one day for the building, 4 s for the motor).
    #[arg(long)]
    steps: Option<usize>,
    /// Building only: set T_in to 20 °C at 10:00.
    #[arg(long)]
    inject_window_open: bool,
    /// Building only: weather CSV instead of the bundled winter day.
    #[arg(long)]
    weather: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1e-4,1e-5,1e-6")]
    tolerances: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 96)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-tolerance statistics CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Solve(a) => solve(a, cli.workers),
        Command::Mpqp(c) => mpqp(c),
        Command::Simulate(a) => simulate(a, cli.workers),
        Command::Bench(a) => bench(a, cli.workers),
    };
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_problem(path: &Path) -> Result<Problem> {
    let file = ProblemFile::read(path).with_context(|| format!("reading {}", path.display()))?;
    let p: Problem = file.into_problem()?;
    p.validate().into_result()?;
    Ok(p)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn status_name(s: SolveStatus) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn solve(a: SolveArgs, workers: usize) -> Result<ExitCode> {
    let p = load_problem(&a.problem)?;
    if a.x0.len() != p.nx() {
        bail!("--x0 has {} entries, the problem has {} states", a.x0.len(), p.nx());
    }
    let x0 = DVector::from_vec(a.x0.clone());
    let cfg = SolverConfig {
        rho: a.rho,
        tol: a.tol,
        max_iter: a.max_iter,
        workers,
        ..SolverConfig::default()
    };
    let split = SplitProblem::build(&p, &x0, a.rho)?;
    let mut solver = Solver::new(split, cfg)?;
    if let Some(path) = &a.log {
        let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        solver.set_log_sink(Box::new(std::io::BufWriter::new(f)));
    }
    let res = solver.solve(&solver.cold_start()?)?;
    // replacing the sink drops (and flushes) the log writer
    solver.set_log_sink(Box::new(std::io::sink()));

    if let Some(path) = &a.dump_kkt {
        let s = &solver.split;
        let pack = evaluate(s, &res.trajectory, &res.lambda, Some(&res.active), solver.config.tol_act)?;
        let mu = solver.config.mu.value(res.prox_inf / a.rho);
        let sys = KktSystem::assemble(&pack, s, &res.trajectory, mu, 0.0)?;
        let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = std::io::BufWriter::new(f);
        sys.write_triplets(&mut w)?;
        w.flush()?;
    }

    let (xs, us) = res.trajectory.unpack(p.nu());
    let rows = |v: &[DVector<f64>]| v.iter().map(|x| x.as_slice().to_vec()).collect::<Vec<_>>();
    let out = json!({
        "status": status_name(res.status),
        "iterations": res.iterations,
        "objective": res.objective,
        "u0": res.u0.as_slice(),
        "trajectory": { "x": rows(&xs), "u": rows(&us) },
        "duals": { "coupling": rows(&res.lambda), "stage": rows(&res.stage_duals) },
        "active": res.active,
        "telemetry": {
            "coupling_inf": res.coupling_inf,
            "prox_inf": res.prox_inf,
            "stationarity_inf": res.stationarity_inf,
            "elapsed_ms": res.elapsed.as_secs_f64() * 1e3,
            "iterations": res.log,
        },
    });
    let text = serde_json::to_string_pretty(&out)?;
    match &a.out {
        Some(path) => write_file(path, &text)?,
        None => println!("{text}"),
    }
    eprintln!(
        "{} after {} iterations, ‖c‖∞ = {:.3e}, objective {:.6e}",
        status_name(res.status),
        res.iterations,
        res.coupling_inf,
        res.objective
    );
    Ok(if res.converged() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn mpqp(c: MpqpCommand) -> Result<ExitCode> {
    match c {
        MpqpCommand::Build { problem, rho, stage, out } => {
            let p = load_problem(&problem)?;
            if stage == 0 || stage > p.horizon {
                bail!("--stage must be in 1..={}", p.horizon);
            }
            let split = SplitProblem::build(&p, &DVector::zeros(p.nx()), rho)?;
            let cfg = SolverConfig::default();
            let maps = StageMaps::build(&split, &cfg.enumeration)?;
            let map = maps.stage(stage);
            MapFile::from_map(map).write(&out)?;
            println!(
                "{} regions, dimension {}, {} distinct stage maps",
                map.region_count(),
                map.qp.dim(),
                maps.maps.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        MpqpCommand::Check {
            map,
            samples,
            seed,
            threshold,
        } => {
            let file = MapFile::read(&map)?;
            let map: bilinear_mpc::Map = file.into_map()?;
            let report = validate_map(&map, samples, &default_sample_box(&map), seed);
            println!("regions               {}", map.region_count());
            println!("samples               {}", report.samples);
            println!("max deviation         {:.3e}", report.max_deviation);
            println!("uncovered             {}", report.uncovered);
            println!("tree mismatches       {}", report.tree_mismatches);
            println!("max continuity jump   {:.3e}", report.max_continuity_jump);
            println!("lipschitz estimate    {:.3e}", report.lipschitz);
            println!("max planes visited    {}", report.max_planes_visited);
            let ok = report.max_deviation <= threshold && report.covered() && report.tree_mismatches == 0;
            println!("{}", if ok { "PASS" } else { "FAIL" });
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn write_report(dir: &Path, report: &MonteCarloReport) -> Result<()> {
    write_file(&dir.join("summary.csv"), &report.summary_csv())?;
    write_file(&dir.join("table.csv"), &report.table_csv())?;
    if let Some(logs) = report.episodes.first() {
        for (r, log) in logs.iter().enumerate() {
            write_file(&dir.join(format!("episode_{r:02}.csv")), &log.to_csv())?;
        }
    }
    Ok(())
}

fn print_rows(report: &MonteCarloReport) {
    println!("tolerance  converged  max_ms    mean_ms   max_it  warm_it  cold_it");
    for r in &report.rows {
        println!(
            "{:<9.0e}  {:>4}/{:<4}  {:<8.4}  {:<8.4}  {:<6}  {:<7.2}  {:<7.2}",
            r.tolerance,
            r.converged_steps,
            r.steps,
            r.max_ms,
            r.mean_ms,
            r.max_iterations,
            r.warm_mean_iterations,
            r.cold_mean_iterations
        );
    }
}

fn building_weather(path: Option<&Path>) -> Result<nalgebra::DMatrix<f64>> {
    let d = match path {
        Some(p) => load_disturbance_csv(p, BUILDING_STEP_MINUTES)?,
        None => bundled_winter_day()?,
    };
    if d.data.nrows() != 2 {
        bail!("building weather needs 2 channels (solar, outdoor), found {}", d.data.nrows());
    }
    Ok(d.data)
}

fn simulate(a: SimulateArgs, workers: usize) -> Result<ExitCode> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    match a.plant {
        Plant::Building => {
            let cfg = MonteCarloConfig {
                episodes: a.episodes,
                steps: a.steps.unwrap_or(96),
                tolerances: vec![a.tol],
                seed: a.seed,
                injection: a.inject_window_open.then(window_open),
                solver: SolverConfig {
                    workers,
                    ..SolverConfig::default()
                },
                ..MonteCarloConfig::default()
            };
            let plant = building_plant(building_weather(a.weather.as_deref())?);
            let report = monte_carlo(&building_model(), &plant, &cfg)?;
            write_report(&a.out, &report)?;
            print_rows(&report);
            Ok(ExitCode::SUCCESS)
        }
        Plant::Motor => {
            if a.inject_window_open || a.weather.is_some() {
                bail!("--inject-window-open and --weather apply to the building only");
            }
            let steps = a.steps.unwrap_or(400);
            let (lo, hi) = SPEED_BAND;
            let plant = motor_plant(MOTOR_DT, lo)?;
            let mut summary = String::from("episode,steps,converged_steps,mean_ms,max_ms,max_iterations,max_speed_violation\n");
            for r in 0..a.episodes {
                let cfg = SolverConfig {
                    tol: a.tol,
                    workers,
                    ..SolverConfig::default()
                };
                let mut controller = Controller::new(motor_model(MOTOR_DT, lo), cfg)?;
                let scenario = ScenarioConfig {
                    seed: a.seed.wrapping_add(r as u64),
                    reference: Some(Reference::square(1, lo, hi, 100, steps)),
                    ..ScenarioConfig::new(steps)
                };
                let log = run_closed_loop(&plant, &mut controller, &scenario)?;
                write_file(&a.out.join(format!("episode_{r:02}.csv")), &log.to_csv())?;
                let n = log.steps.len().max(1) as f64;
                let conv = log.steps.iter().filter(|s| s.status == SolveStatus::Converged).count();
                let mean_ms = log.steps.iter().map(|s| s.solve_ms).sum::<f64>() / n;
                let max_ms = log.steps.iter().map(|s| s.solve_ms).fold(0.0, f64::max);
                let max_it = log.steps.iter().map(|s| s.iterations).max().unwrap_or(0);
                let viol = log
                    .steps
                    .iter()
                    .map(|s| (lo - s.x[1]).max(s.x[1] - hi).max(0.0))
                    .fold(0.0, f64::max);
                summary.push_str(&format!("{r},{},{conv},{mean_ms:.6},{max_ms:.6},{max_it},{viol:e}\n", log.steps.len()));
                println!(
                    "episode {r}: {conv}/{} converged, mean {mean_ms:.4} ms, max {max_it} iterations, final speed {:.4}",
                    log.steps.len(),
                    log.final_state[1]
                );
            }
            write_file(&a.out.join("summary.csv"), &summary)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn bench(a: BenchArgs, workers: usize) -> Result<ExitCode> {
    let cfg = MonteCarloConfig {
        episodes: a.episodes,
        steps: a.steps,
        tolerances: a.tolerances.clone(),
        seed: a.seed,
        parallel: false,
        solver: SolverConfig {
            workers,
            ..SolverConfig::default()
        },
        ..MonteCarloConfig::default()
    };
    let plant = building_plant(building_weather(None)?);
    let report = monte_carlo(&building_model(), &plant, &cfg)?;
    write_file(&a.out, &report.table_csv())?;
    if let Some(path) = &a.summary {
        write_file(path, &report.summary_csv())?;
    }
    print_rows(&report);
    Ok(ExitCode::SUCCESS)
}
