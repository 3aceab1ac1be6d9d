//! The outer iteration: stage solves, sensitivities, termination test,
//! coupled Newton step and full-step update, plus warm starting and the
//! receding-horizon controller.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kkt::{KktSolution, KktSystem};
use crate::mpqp::EnumerationOptions;
use crate::problem::{BilinearMpcProblem, SplitProblem, Trajectory};
use crate::qp::{solve_qp, QpProblem};
use crate::scalar::{lit, to_f64, Real};
use crate::sensitivity::{evaluate, lagrangian_gradient};
use crate::stage::{assemble_theta, solve_stages, StageMaps, Workers, WORKERS_ENV};

/// `μ = clamp(base / max(‖y − z‖∞, floor), min, max)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuSchedule {
    pub base: f64,
    pub floor: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for MuSchedule {
    fn default() -> Self {
        Self {
            base: 1.0,
            floor: 1e-8,
            min: 1e2,
            max: 1e12,
        }
    }
}

impl MuSchedule {
    pub fn value(&self, step: f64) -> f64 {
        (self.base / step.max(self.floor)).clamp(self.min, self.max)
    }
}

/// Regularization tried first, then escalated along `ladder · max(1, ‖H‖∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaPolicy {
    pub initial: f64,
    pub ladder: Vec<f64>,
}

impl Default for SigmaPolicy {
    fn default() -> Self {
        Self {
            initial: 0.0,
            ladder: vec![1e-6, 1e-4, 1e-2, 1.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Proximal weight; baked into the stage maps.
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub mu: MuSchedule,
    pub sigma: SigmaPolicy,
    /// `1` runs stages inline; `0` uses `BMPC_WORKERS` or the core count.
    pub workers: usize,
    /// Geometric activity tolerance, used when the stage solver gives no active set.
    pub tol_act: f64,
    /// Abort when `‖c‖∞` exceeds this multiple of `max(‖c‖∞ at start, 1)`.
    pub divergence_factor: f64,
    /// Keep every stage solution `y` in [`SolveResult::iterates`].
    pub record_iterates: bool,
    pub enumeration: EnumerationOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let workers = std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(1);
        Self {
            rho: 1.0,
            tol: 1e-6,
            max_iter: 100,
            mu: MuSchedule::default(),
            sigma: SigmaPolicy::default(),
            workers,
            tol_act: 1e-8,
            divergence_factor: 1e6,
            record_iterates: false,
            enumeration: EnumerationOptions::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho must be positive");
        }
        if !(self.tol > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if !(self.mu.min > 0.0 && self.mu.min <= self.mu.max && self.mu.floor > 0.0) {
            return bad("invalid mu schedule");
        }
        if self.sigma.initial < 0.0 || self.sigma.ladder.iter().any(|&s| s <= 0.0) {
            return bad("sigma values must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    /// Coupling residual blew up past the guard.
    Diverged,
    /// No σ on the ladder gave a usable coupled step.
    Error,
}

/// One line of telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub coupling_inf: f64,
    pub prox_inf: f64,
    /// `‖∇_ξ𝓛⁰ + P_ξᵀν‖∞` over stages `1..N`.
    pub stationarity_inf: f64,
    pub sigma: f64,
    pub mu: f64,
    /// `‖H − ∇²𝓛⁰‖_F = σ√dim`
    pub hessian_deviation: f64,
    pub fallbacks: usize,
    pub stage_ms: f64,
    pub kkt_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState<T: Real> {
    pub z: Trajectory<T>,
    pub lambda: Vec<DVector<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult<T: Real> {
    /// Stage solutions `y` of the reported iterate; always inside `Ξ_k`.
    pub trajectory: Trajectory<T>,
    /// Multipliers the reported `y` was computed with.
    pub lambda: Vec<DVector<T>>,
    /// Next primal-dual iterate after the last completed step.
    pub next: SolverState<T>,
    pub stage_duals: Vec<DVector<T>>,
    pub active: Vec<Vec<usize>>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub coupling_inf: f64,
    pub prox_inf: f64,
    pub stationarity_inf: f64,
    /// Objective of the original problem at `trajectory`.
    pub objective: f64,
    pub u0: DVector<T>,
    pub log: Vec<IterationRecord>,
    pub iterates: Vec<Trajectory<T>>,
    pub elapsed: Duration,
}

impl<T: Real> SolveResult<T> {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

struct Snapshot<T: Real> {
    y: Trajectory<T>,
    lambda: Vec<DVector<T>>,
    duals: Vec<DVector<T>>,
    active: Vec<Vec<usize>>,
    coupling: f64,
    prox: f64,
    stationarity: f64,
}

fn max_inf<T: Real>(vs: &[DVector<T>]) -> f64 {
    vs.iter().fold(0.0, |m, v| m.max(to_f64(v.amax())))
}

/// Projection of the origin onto `U`.
fn input_origin<T: Real>(s: &SplitProblem<T>) -> Result<DVector<T>> {
    let set = &s.input_set;
    let zero = DVector::zeros(s.nu);
    if set.contains(&zero, T::zero()) {
        return Ok(zero);
    }
    let eye = DMatrix::identity(s.nu, s.nu);
    let sol = solve_qp(&QpProblem {
        hessian: &eye,
        linear: &zero,
        eq: None,
        ineq: (&set.lhs, &set.rhs),
    })
    .map_err(|_| Error::StageInfeasible { stage: 1 })?;
    Ok(sol.y)
}

/// Algorithm driver bound to one split problem and its stage maps.
pub struct Solver<T: Real> {
    pub split: SplitProblem<T>,
    pub maps: StageMaps<T>,
    pub config: SolverConfig,
    workers: Workers,
    sink: Option<Mutex<Box<dyn Write + Send>>>,
}

impl<T: Real> std::fmt::Debug for Solver<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solver")
            .field("horizon", &self.split.horizon)
            .field("maps", &self.maps.maps.len())
            .field("config", &self.config)
            .finish()
    }
}

impl<T: Real> Solver<T> {
    /// Builds the stage maps; `split.rho` must equal `config.rho`.
    pub fn new(split: SplitProblem<T>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        Self::check_rho(&split, &config)?;
        let maps = StageMaps::build(&split, &config.enumeration)?;
        Self::with_maps(split, maps, config)
    }

    pub fn with_maps(split: SplitProblem<T>, maps: StageMaps<T>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        Self::check_rho(&split, &config)?;
        check_dim("stage maps", split.horizon, maps.horizon())?;
        for k in 1..=split.horizon {
            let qp = &maps.stage(k).qp;
            if qp.hessian != split.local_hessian(k) || qp.set != split.stage_set {
                return Err(Error::InvalidConfig(format!(
                    "stage {k} map was built for different stage data"
                )));
            }
        }
        let workers = Workers::new(config.workers)?;
        Ok(Self {
            split,
            maps,
            config,
            workers,
            sink: None,
        })
    }

    fn check_rho(split: &SplitProblem<T>, config: &SolverConfig) -> Result<()> {
        if (to_f64(split.rho) - config.rho).abs() > 1e-12 * config.rho.max(1.0) {
            return Err(Error::InvalidConfig(
                "split problem and solver config disagree on rho".into(),
            ));
        }
        Ok(())
    }

    /// Streams one JSON object per iteration to `w`.
    pub fn set_log_sink(&mut self, w: Box<dyn Write + Send>) {
        self.sink = Some(Mutex::new(w));
    }

    pub fn workers(&self) -> usize {
        self.workers.count()
    }

    /// Forward simulation under the projection of `u = 0` onto `U`, with `λ = 0`.
    pub fn cold_start(&self) -> Result<SolverState<T>> {
        let u = input_origin(&self.split)?;
        let z = self.split.simulate(&vec![u; self.split.horizon])?;
        Ok(SolverState {
            z,
            lambda: vec![DVector::zeros(self.split.nx); self.split.horizon],
        })
    }

    fn stationarity(&self, y: &Trajectory<T>, lambda: &[DVector<T>], duals: &[DVector<T>]) -> f64 {
        let Ok(grad) = lagrangian_gradient(&self.split, y, lambda) else {
            return f64::INFINITY;
        };
        let p = &self.split.stage_set.lhs;
        (1..=self.split.horizon)
            .map(|k| to_f64((&grad[k] + p.tr_mul(&duals[k - 1])).amax()))
            .fold(0.0, f64::max)
    }

    fn emit(&self, rec: &IterationRecord) {
        if let Some(sink) = &self.sink {
            if let (Ok(mut w), Ok(line)) = (sink.lock(), serde_json::to_string(rec)) {
                let _ = writeln!(w, "{line}");
            }
        }
    }

    fn coupled_step(
        &self,
        pack: &crate::sensitivity::SensitivityPack<T>,
        y: &Trajectory<T>,
        mu: T,
    ) -> Option<(KktSolution<T>, T)> {
        let scale = to_f64(pack.hessian.inf_norm()).max(1.0);
        let ladder = std::iter::once(self.config.sigma.initial)
            .chain(self.config.sigma.ladder.iter().map(|s| s * scale));
        for sigma in ladder {
            let sigma = lit::<T>(sigma);
            let Ok(sys) = KktSystem::assemble(pack, &self.split, y, mu, sigma) else {
                return None;
            };
            match sys.schur_solve() {
                Ok(sol) if sol.dy.iter().chain(&sol.lambda).all(|v| v.iter().all(|x| x.is_finite())) => {
                    return Some((sol, sigma));
                }
                _ => continue,
            }
        }
        None
    }

    /// Runs the iteration from `init` until the termination test passes or a
    /// limit is hit. The returned trajectory is always a set of stage solutions,
    /// so its inputs satisfy the input constraints whatever the status.
    pub fn solve(&self, init: &SolverState<T>) -> Result<SolveResult<T>> {
        let s = &self.split;
        s.check_trajectory(&init.z)?;
        check_dim("initial multipliers", s.horizon, init.lambda.len())?;
        let start = Instant::now();
        let cfg = &self.config;
        let tol_act = lit::<T>(cfg.tol_act);
        let rho = to_f64(s.rho);

        let mut z = init.z.clone();
        z.xi[0] = s.x_init.clone();
        let mut lambda = init.lambda.clone();
        let mut log = Vec::new();
        let mut iterates = Vec::new();
        let mut best: Option<Snapshot<T>> = None;
        let mut status = SolveStatus::MaxIter;
        let mut baseline = None;
        let mut iterations = 0;

        for it in 1..=cfg.max_iter {
            iterations = it;
            let t0 = Instant::now();
            let params = assemble_theta(s, &z, &lambda)?;
            let stages = solve_stages(&self.maps, &params, &s.x_init, &self.workers)?;
            let y = stages.y;
            let pack = evaluate(s, &y, &lambda, Some(&stages.active), tol_act)?;
            let stage_ms = t0.elapsed().as_secs_f64() * 1e3;

            let coupling = max_inf(&pack.c);
            let step = to_f64(y.max_abs_diff(&z));
            let prox = rho * step;
            let stationarity = self.stationarity(&y, &lambda, &stages.duals);
            if cfg.record_iterates {
                iterates.push(y.clone());
            }
            let snap = Snapshot {
                y: y.clone(),
                lambda: lambda.clone(),
                duals: stages.duals,
                active: stages.active,
                coupling,
                prox,
                stationarity,
            };
            let merit = coupling.max(prox);
            if best.as_ref().is_none_or(|b| !(merit > b.coupling.max(b.prox))) {
                best = Some(snap);
            }

            let mut rec = IterationRecord {
                iteration: it,
                coupling_inf: coupling,
                prox_inf: prox,
                stationarity_inf: stationarity,
                sigma: 0.0,
                mu: 0.0,
                hessian_deviation: 0.0,
                fallbacks: stages.fallbacks,
                stage_ms,
                kkt_ms: 0.0,
            };

            if coupling <= cfg.tol && prox <= cfg.tol {
                status = SolveStatus::Converged;
                self.emit(&rec);
                log.push(rec);
                break;
            }
            let base = *baseline.get_or_insert(coupling.max(1.0));
            if !coupling.is_finite() || coupling > cfg.divergence_factor * base {
                status = SolveStatus::Diverged;
                self.emit(&rec);
                log.push(rec);
                break;
            }

            let t1 = Instant::now();
            let mu = cfg.mu.value(step);
            let Some((sol, sigma)) = self.coupled_step(&pack, &y, lit(mu)) else {
                status = SolveStatus::Error;
                self.emit(&rec);
                log.push(rec);
                break;
            };
            rec.kkt_ms = t1.elapsed().as_secs_f64() * 1e3;
            rec.mu = mu;
            rec.sigma = to_f64(sigma);
            rec.hessian_deviation = to_f64(pack.hessian.clone().with_sigma(sigma).deviation_from_exact());
            self.emit(&rec);
            log.push(rec);

            for (zk, (yk, dk)) in z.xi.iter_mut().zip(y.xi.iter().zip(&sol.dy)) {
                *zk = yk + dk;
            }
            lambda = sol.lambda;
        }

        let chosen = best.expect("at least one iteration runs");
        let objective = to_f64(s.objective(&chosen.y));
        Ok(SolveResult {
            u0: chosen.y.input(1, s.nu),
            trajectory: chosen.y,
            lambda: chosen.lambda,
            next: SolverState { z, lambda },
            stage_duals: chosen.duals,
            active: chosen.active,
            status,
            iterations,
            coupling_inf: chosen.coupling,
            prox_inf: chosen.prox,
            stationarity_inf: chosen.stationarity,
            objective,
            log,
            iterates,
            elapsed: start.elapsed(),
        })
    }
}

/// One-shot solve with a temporary worker pool.
pub fn solve<T: Real>(
    s: &SplitProblem<T>,
    maps: &StageMaps<T>,
    cfg: &SolverConfig,
    init: &SolverState<T>,
) -> Result<SolveResult<T>> {
    Solver::with_maps(s.clone(), maps.clone(), cfg.clone())?.solve(init)
}

/// Shifts a previous solution one stage forward, duplicating the last stage,
/// and pins `ξ_0` to the new measurement.
pub fn warm_start_shift<T: Real>(prev: &SolveResult<T>, new_x: &DVector<T>) -> Result<SolverState<T>> {
    let xi = &prev.trajectory.xi;
    let n = xi.len() - 1;
    check_dim("measured state", xi[0].len(), new_x.len())?;
    let mut z = Vec::with_capacity(n + 1);
    z.push(new_x.clone());
    for k in 1..=n {
        z.push(xi[(k + 1).min(n)].clone());
    }
    let lam = &prev.lambda;
    let lambda = (0..lam.len()).map(|k| lam[(k + 1).min(lam.len() - 1)].clone()).collect();
    Ok(SolverState {
        z: Trajectory { xi: z },
        lambda,
    })
}

/// Receding-horizon controller around a [`Solver`].
#[derive(Debug)]
pub struct Controller<T: Real> {
    pub problem: BilinearMpcProblem<T>,
    pub solver: Solver<T>,
    pub warm_start: bool,
    last: Option<SolveResult<T>>,
}

impl<T: Real> Controller<T> {
    pub fn new(problem: BilinearMpcProblem<T>, config: SolverConfig) -> Result<Self> {
        let split = SplitProblem::build(&problem, &DVector::zeros(problem.nx()), lit(config.rho))?;
        let solver = Solver::new(split, config)?;
        Ok(Self {
            problem,
            solver,
            warm_start: true,
            last: None,
        })
    }

    pub fn with_solver(problem: BilinearMpcProblem<T>, solver: Solver<T>) -> Self {
        Self {
            problem,
            solver,
            warm_start: true,
            last: None,
        }
    }

    pub fn reset(&mut self) {
        self.last = None;
    }

    /// Updates the state part of the linear cost, e.g. a new tracking reference.
    pub fn set_state_linear(&mut self, q: &DVector<T>, q_terminal: &DVector<T>) -> Result<()> {
        self.solver.split.set_state_linear(q, q_terminal)?;
        self.problem.cost.state_linear = q.clone();
        self.problem.cost.terminal_linear = q_terminal.clone();
        Ok(())
    }

    pub fn last(&self) -> Option<&SolveResult<T>> {
        self.last.as_ref()
    }

    /// Solves at the measured state with the first `N` forecast columns and
    /// returns the first input, which always lies in `U`.
    pub fn mpc_step(&mut self, x_meas: &DVector<T>, forecast: &DMatrix<T>) -> Result<(DVector<T>, SolveResult<T>)> {
        let n = self.problem.horizon;
        check_dim("measured state", self.problem.nx(), x_meas.len())?;
        check_dim("forecast rows", self.problem.dynamics.nw(), forecast.nrows())?;
        if forecast.ncols() < n {
            return Err(Error::Dimension {
                context: "forecast columns",
                expected: n,
                found: forecast.ncols(),
            });
        }
        let w = forecast.columns(0, n).into_owned();
        let split = &mut self.solver.split;
        split.set_disturbance(&self.problem.dynamics.bw, &w)?;
        split.x_init = x_meas.clone();
        let init = match (&self.last, self.warm_start) {
            (Some(prev), true) => warm_start_shift(prev, x_meas)?,
            _ => self.solver.cold_start()?,
        };
        let result = self.solver.solve(&init)?;
        let u = result.u0.clone();
        self.last = Some(result.clone());
        Ok((u, result))
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dense_linear_mpc;
    use crate::problem::{BilinearDynamics, Polyhedron, StageCost};
    use crate::sim::models::{motor_equilibrium, motor_model, MotorParams};
    use nalgebra::{dmatrix, dvector};

    fn linear_problem() -> BilinearMpcProblem<f64> {
        BilinearMpcProblem {
            dynamics: BilinearDynamics {
                a: dmatrix![1.0, 0.1; -0.2, 0.95],
                b: dmatrix![0.0; 0.5],
                c: vec![DMatrix::zeros(2, 2)],
                bw: dmatrix![0.05; 0.0],
            },
            state_set: Polyhedron::from_bounds(&[-5.0, -0.6], &[5.0, 5.0]),
            input_set: Polyhedron::from_bounds(&[-1.0], &[1.0]),
            cost: StageCost {
                state_weight: DMatrix::identity(2, 2),
                state_linear: dvector![0.0, 0.0],
                input_weight: dmatrix![0.5],
                input_linear: dvector![0.0],
                terminal_weight: DMatrix::identity(2, 2) * 2.0,
                terminal_linear: dvector![0.0, 0.0],
                constant: 0.0,
            },
            horizon: 6,
            disturbance: DMatrix::from_element(1, 6, 1.0),
        }
    }

    fn config() -> SolverConfig {
        SolverConfig {
            workers: 1,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn linear_case_matches_dense_qp() {
        let p = linear_problem();
        let split = SplitProblem::build(&p, &dvector![2.0, 1.0], 1.0).unwrap();
        let solver = Solver::new(split.clone(), SolverConfig { tol: 1e-8, ..config() }).unwrap();
        let r = solver.solve(&solver.cold_start().unwrap()).unwrap();
        assert!(r.converged(), "{:?} {:#?}", r.status, r.log);
        let qp = dense_linear_mpc(&split).unwrap();
        assert!(r.trajectory.max_abs_diff(&qp.trajectory) < 1e-6);
        assert!((r.objective - qp.objective).abs() < 1e-7 * qp.objective.abs().max(1.0));
    }

    #[test]
    fn converged_point_is_a_fixed_point() {
        let p = motor_model::<f64>(0.01, 18.0);
        let split = SplitProblem::build(&p, &dvector![5.0, 17.0], 1.0).unwrap();
        let solver = Solver::new(split, SolverConfig { tol: 1e-11, ..config() }).unwrap();
        let first = solver.solve(&solver.cold_start().unwrap()).unwrap();
        assert!(first.converged());
        let loose = Solver::with_maps(solver.split.clone(), solver.maps.clone(), config()).unwrap();
        let again = loose.solve(&first.next).unwrap();
        assert_eq!(again.iterations, 1);
        assert_eq!(again.log[0].kkt_ms, 0.0);
        assert!(again.converged());
    }

    #[test]
    fn warm_shift_of_steady_state_is_itself() {
        let p = motor_model::<f64>(0.01, 18.0);
        let (u, i) = motor_equilibrium(&MotorParams::default(), 18.0).unwrap();
        let xi = vec![dvector![i, 18.0], dvector![u, i, 18.0], dvector![u, i, 18.0], dvector![u, i, 18.0]];
        let split = SplitProblem::build(&p, &dvector![i, 18.0], 1.0).unwrap();
        let solver = Solver::new(split, config()).unwrap();
        let mut r = solver.solve(&solver.cold_start().unwrap()).unwrap();
        r.trajectory = Trajectory { xi: xi.clone() };
        r.lambda = vec![dvector![0.3, -0.2]; 3];
        let shifted = warm_start_shift(&r, &dvector![i, 18.0]).unwrap();
        assert_eq!(shifted.z.xi, xi);
        assert_eq!(shifted.lambda, r.lambda);
        assert!(warm_start_shift(&r, &dvector![1.0]).is_err());
    }

    #[test]
    fn motor_holds_equilibrium_input() {
        let (u_eq, i) = motor_equilibrium(&MotorParams::default(), 18.0).unwrap();
        let mut c = Controller::new(motor_model::<f64>(0.01, 18.0), config()).unwrap();
        let (u, r) = c.mpc_step(&dvector![i, 18.0], &DMatrix::from_element(1, 3, 1.0)).unwrap();
        assert!(r.converged());
        assert!((u[0] - u_eq).abs() < 1e-3, "{} vs {u_eq}", u[0]);
    }

    #[test]
    fn every_iterate_is_input_feasible_and_runs_are_deterministic() {
        let p = crate::sim::models::building_model::<f64>();
        let split = SplitProblem::build(&p, &dvector![21.0, 22.0, 12.0, 25.0], 1.0).unwrap();
        let cfg = SolverConfig {
            record_iterates: true,
            max_iter: 30,
            ..config()
        };
        let solver = Solver::new(split.clone(), cfg.clone()).unwrap();
        let init = solver.cold_start().unwrap();
        let a = solver.solve(&init).unwrap();
        assert!(!a.iterates.is_empty());
        for y in &a.iterates {
            for k in 1..=10 {
                assert!(split.input_set.contains(&y.input(k, 1), 1e-8));
                assert!(split.stage_set.contains(&y.xi[k], 1e-8));
            }
        }
        let b = solver.solve(&init).unwrap();
        assert_eq!(a.iterates, b.iterates);
        let par = Solver::new(split, SolverConfig { workers: 3, ..cfg }).unwrap();
        assert_eq!(par.solve(&init).unwrap().iterates, a.iterates);
    }

    #[test]
    fn invalid_configurations() {
        let split = SplitProblem::build(&linear_problem(), &dvector![0.0, 0.0], 1.0).unwrap();
        assert!(Solver::new(split.clone(), SolverConfig { rho: 2.0, ..config() }).is_err());
        assert!(Solver::new(split.clone(), SolverConfig { tol: 0.0, ..config() }).is_err());
        assert!(Solver::new(split.clone(), SolverConfig { max_iter: 0, ..config() }).is_err());
        let solver = Solver::new(split, config()).unwrap();
        let mut init = solver.cold_start().unwrap();
        init.lambda.pop();
        assert!(matches!(solver.solve(&init), Err(Error::Dimension { .. })));
    }

    #[test]
    fn mu_schedule_clamps() {
        let m = MuSchedule::default();
        assert_eq!(m.value(1.0), 1e2);
        assert!((m.value(1e-5) - 1e5).abs() < 1e-6);
        assert_eq!(m.value(0.0), 1e8);
        assert_eq!(MuSchedule { floor: 1e-14, ..m }.value(0.0), 1e12);
    }

    #[test]
    fn log_sink_receives_one_line_per_iteration() {
        #[derive(Clone, Default)]
        struct Buf(std::sync::Arc<Mutex<Vec<u8>>>);
        impl Write for Buf {
            fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(b);
                Ok(b.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let split = SplitProblem::build(&linear_problem(), &dvector![1.0, 0.0], 1.0).unwrap();
        let mut solver = Solver::new(split, config()).unwrap();
        let buf = Buf::default();
        solver.set_log_sink(Box::new(buf.clone()));
        let r = solver.solve(&solver.cold_start().unwrap()).unwrap();
        let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        let lines: Vec<IterationRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), r.log.len());
        for (a, b) in lines.iter().zip(&r.log) {
            assert_eq!(a.iteration, b.iteration);
            assert!((a.coupling_inf - b.coupling_inf).abs() <= 1e-15 * b.coupling_inf.max(1.0));
        }
    }
}
