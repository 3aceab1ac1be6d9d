//! Repeated closed-loop episodes over perturbed weather, summarised per
//! solver tolerance as a timing table.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{BilinearMpcProblem, SplitProblem};
use crate::sim::closed_loop::{run_closed_loop, EpisodeLog, PlantModel, ScenarioConfig, StateInjection};
use crate::solver::{Controller, SolveStatus, Solver, SolverConfig};
use crate::stage::StageMaps;

/// Reported solve times of the proposed method, `(tolerance, max ms, mean ms)`.
pub const REPORTED_TIMES: [(f64, f64, f64); 3] = [(1e-4, 0.931, 0.103), (1e-5, 0.979, 0.130), (1e-6, 0.982, 0.148)];

#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub episodes: usize,
    pub steps: usize,
    pub tolerances: Vec<f64>,
    pub seed: u64,
    pub forecast_noise: Vec<f64>,
    /// Per-episode constant offset added to each actual disturbance channel.
    pub weather_offset: Vec<f64>,
    pub injection: Option<StateInjection>,
    pub compare_cold: bool,
    /// Run episodes on the rayon pool; timings are cleaner when off.
    pub parallel: bool,
    /// Base configuration; `tol` is replaced per row.
    pub solver: SolverConfig,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            steps: 96,
            tolerances: vec![1e-4, 1e-5, 1e-6],
            seed: 0,
            forecast_noise: vec![0.02, 0.5],
            weather_offset: vec![0.0, 1.0],
            injection: None,
            compare_cold: true,
            parallel: true,
            solver: SolverConfig {
                workers: 1,
                ..SolverConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToleranceSummary {
    pub tolerance: f64,
    pub episodes: usize,
    pub steps: usize,
    pub converged_steps: usize,
    pub max_ms: f64,
    pub mean_ms: f64,
    pub max_iterations: usize,
    pub mean_iterations: f64,
    /// Steps after the first of each episode (shifted initial guess).
    pub warm_mean_iterations: f64,
    pub warm_mean_ms: f64,
    /// Cold-start solves: the shadow solves when enabled, else first steps.
    pub cold_mean_iterations: f64,
    pub cold_mean_ms: f64,
    /// Largest state-set violation at converged steps (before and after the move).
    pub max_state_violation: f64,
    /// Largest input-set violation over all applied inputs.
    pub max_input_violation: f64,
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub rows: Vec<ToleranceSummary>,
    /// `episodes[row][run]`
    pub episodes: Vec<Vec<EpisodeLog>>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Realized disturbance of one episode: the base profile plus seeded offsets.
pub fn episode_weather(base: &DMatrix<f64>, offset_std: &[f64], seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ff5);
    let mut out = base.clone();
    for i in 0..out.nrows() {
        let sd = offset_std.get(i).copied().unwrap_or(0.0);
        if sd > 0.0 {
            let d: f64 = Normal::new(0.0, sd).map(|n| n.sample(&mut rng)).unwrap_or(0.0);
            out.row_mut(i).add_scalar_mut(d);
        }
    }
    out
}

fn summarize(
    tol: f64,
    problem: &BilinearMpcProblem<f64>,
    logs: &[EpisodeLog],
    shadow: bool,
) -> ToleranceSummary {
    let all: Vec<_> = logs.iter().flat_map(|l| &l.steps).collect();
    let warm: Vec<_> = logs.iter().flat_map(|l| l.steps.iter().skip(1)).collect();
    let (cold_it, cold_ms): (Vec<f64>, Vec<f64>) = if shadow {
        all.iter()
            .filter_map(|s| Some((s.cold_iterations? as f64, s.cold_ms?)))
            .unzip()
    } else {
        logs.iter()
            .filter_map(|l| l.steps.first())
            .map(|s| (s.iterations as f64, s.solve_ms))
            .unzip()
    };
    let mut state_viol: f64 = 0.0;
    let mut input_viol: f64 = 0.0;
    for l in logs {
        for (t, s) in l.steps.iter().enumerate() {
            let u = DVector::from_column_slice(&s.u);
            input_viol = input_viol.max(problem.input_set.max_violation(&u));
            if s.status == SolveStatus::Converged {
                let next = l.steps.get(t + 1).map_or(&l.final_state, |n| &n.x);
                for x in [&s.x, next] {
                    state_viol = state_viol.max(problem.state_set.max_violation(&DVector::from_column_slice(x)));
                }
            }
        }
    }
    ToleranceSummary {
        tolerance: tol,
        episodes: logs.len(),
        steps: all.len(),
        converged_steps: all.iter().filter(|s| s.status == SolveStatus::Converged).count(),
        max_ms: all.iter().map(|s| s.solve_ms).fold(0.0, f64::max),
        mean_ms: mean(all.iter().map(|s| s.solve_ms)),
        max_iterations: all.iter().map(|s| s.iterations).max().unwrap_or(0),
        mean_iterations: mean(all.iter().map(|s| s.iterations as f64)),
        warm_mean_iterations: mean(warm.iter().map(|s| s.iterations as f64)),
        warm_mean_ms: mean(warm.iter().map(|s| s.solve_ms)),
        cold_mean_iterations: mean(cold_it.into_iter()),
        cold_mean_ms: mean(cold_ms.into_iter()),
        max_state_violation: state_viol.max(0.0),
        max_input_violation: input_viol.max(0.0),
    }
}

/// Runs `episodes × tolerances` closed-loop episodes. Episode `r` uses the
/// same weather and forecast noise for every tolerance.
pub fn monte_carlo(
    problem: &BilinearMpcProblem<f64>,
    plant: &PlantModel,
    cfg: &MonteCarloConfig,
) -> Result<MonteCarloReport> {
    if cfg.episodes == 0 {
        return Err(Error::InvalidConfig("at least one episode is required".into()));
    }
    let split = SplitProblem::build(problem, &DVector::zeros(problem.nx()), cfg.solver.rho)?;
    let maps = StageMaps::build(&split, &cfg.solver.enumeration)?;
    let mut rows = Vec::new();
    let mut episodes = Vec::new();
    for &tol in &cfg.tolerances {
        let solver_cfg = SolverConfig {
            tol,
            ..cfg.solver.clone()
        };
        let run = |r: usize| -> Result<EpisodeLog> {
            let seed = cfg.seed.wrapping_add(r as u64);
            let plant = PlantModel {
                disturbance: episode_weather(&plant.disturbance, &cfg.weather_offset, seed),
                ..plant.clone()
            };
            let solver = Solver::with_maps(split.clone(), maps.clone(), solver_cfg.clone())?;
            let mut controller = Controller::with_solver(problem.clone(), solver);
            let scenario = ScenarioConfig {
                forecast_noise: cfg.forecast_noise.clone(),
                seed,
                injection: cfg.injection,
                compare_cold: cfg.compare_cold,
                ..ScenarioConfig::new(cfg.steps)
            };
            run_closed_loop(&plant, &mut controller, &scenario)
        };
        let logs: Vec<Result<EpisodeLog>> = if cfg.parallel {
            (0..cfg.episodes).into_par_iter().map(run).collect()
        } else {
            (0..cfg.episodes).map(run).collect()
        };
        let logs = logs.into_iter().collect::<Result<Vec<_>>>()?;
        rows.push(summarize(tol, problem, &logs, cfg.compare_cold));
        episodes.push(logs);
    }
    Ok(MonteCarloReport { rows, episodes })
}

impl MonteCarloReport {
    /// Two header rows (tolerance, max/mean) and one row per source; the
    /// reported row is reference only.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("tolerance");
        for r in &self.rows {
            let _ = write!(out, ",{:e},", r.tolerance);
        }
        out.push_str("\nsol time(ms)");
        for _ in &self.rows {
            out.push_str(",max,mean");
        }
        out.push_str("\nreported (proposed)");
        for r in &self.rows {
            match REPORTED_TIMES.iter().find(|p| (p.0 - r.tolerance).abs() < 1e-15) {
                Some(p) => {
                    let _ = write!(out, ",{},{}", p.1, p.2);
                }
                None => out.push_str(",,"),
            }
        }
        out.push_str("\nthis run");
        for r in &self.rows {
            let _ = write!(out, ",{:.4},{:.4}", r.max_ms, r.mean_ms);
        }
        out.push_str("\nthis run warm");
        for r in &self.rows {
            let _ = write!(out, ",,{:.4}", r.warm_mean_ms);
        }
        out.push_str("\nthis run cold");
        for r in &self.rows {
            let _ = write!(out, ",,{:.4}", r.cold_mean_ms);
        }
        out.push('\n');
        out
    }

    /// One row per tolerance with every statistic.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "tolerance,episodes,steps,converged_steps,max_ms,mean_ms,max_iterations,mean_iterations,\
             warm_mean_iterations,cold_mean_iterations,warm_mean_ms,cold_mean_ms,max_state_violation,max_input_violation\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:e},{},{},{},{:.6},{:.6},{},{:.4},{:.4},{:.4},{:.6},{:.6},{:e},{:e}",
                r.tolerance,
                r.episodes,
                r.steps,
                r.converged_steps,
                r.max_ms,
                r.mean_ms,
                r.max_iterations,
                r.mean_iterations,
                r.warm_mean_iterations,
                r.cold_mean_iterations,
                r.warm_mean_ms,
                r.cold_mean_ms,
                r.max_state_violation,
                r.max_input_violation
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::models::building_model;
    use crate::sim::weather::WinterProfile;
    use nalgebra::dvector;

    fn small() -> (BilinearMpcProblem<f64>, PlantModel, MonteCarloConfig) {
        let p = building_model::<f64>();
        let plant = PlantModel {
            dynamics: p.dynamics.clone(),
            x0: dvector![23.0, 22.5, 12.0, 30.0],
            disturbance: WinterProfile::default().generate(15.0, 1).data,
        };
        let cfg = MonteCarloConfig {
            episodes: 1,
            steps: 5,
            tolerances: vec![1e-4],
            seed: 4,
            ..MonteCarloConfig::default()
        };
        (p, plant, cfg)
    }

    #[test]
    fn single_run_is_deterministic() {
        let (p, plant, cfg) = small();
        let a = monte_carlo(&p, &plant, &cfg).unwrap();
        let b = monte_carlo(&p, &plant, &cfg).unwrap();
        let it = |r: &MonteCarloReport| r.episodes[0][0].steps.iter().map(|s| (s.iterations, s.u.clone())).collect::<Vec<_>>();
        assert_eq!(it(&a), it(&b));
        assert_eq!(a.rows[0].steps, 5);
        assert_eq!(a.rows[0].max_input_violation, 0.0);
    }

    #[test]
    fn table_layout() {
        let (p, plant, cfg) = small();
        let r = monte_carlo(&p, &plant, &cfg).unwrap();
        let t = r.table_csv();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "tolerance,1e-4,");
        assert_eq!(lines[1], "sol time(ms),max,mean");
        assert_eq!(lines[2], "reported (proposed),0.931,0.103");
        assert_eq!(r.summary_csv().lines().count(), 2);
    }

    #[test]
    fn zero_episodes_rejected() {
        let (p, plant, cfg) = small();
        assert!(monte_carlo(&p, &plant, &MonteCarloConfig { episodes: 0, ..cfg }).is_err());
    }
}
