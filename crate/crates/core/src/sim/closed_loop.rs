//! Receding-horizon simulation: the controller plans against a noisy forecast
//! while the plant moves under the actual disturbance.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};
use crate::problem::BilinearDynamics;
use crate::solver::{Controller, SolveStatus};

/// Plant used for simulation; `disturbance` holds the realized values and is
/// read cyclically when an episode outlasts it.
#[derive(Debug, Clone)]
pub struct PlantModel {
    pub dynamics: BilinearDynamics<f64>,
    pub x0: DVector<f64>,
    pub disturbance: DMatrix<f64>,
}

impl PlantModel {
    fn actual(&self, t: usize) -> DVector<f64> {
        self.disturbance.column(t % self.disturbance.ncols()).into_owned()
    }

    fn actual_window(&self, t: usize, n: usize) -> DMatrix<f64> {
        let len = self.disturbance.ncols();
        DMatrix::from_fn(self.disturbance.nrows(), n, |i, j| self.disturbance[(i, (t + j) % len)])
    }
}

/// Overrides one state coordinate of the measurement at a given step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateInjection {
    pub step: usize,
    pub state: usize,
    pub value: f64,
}

/// Time-varying tracking target `x_i → r_t`, realised through the linear cost
/// `q = −Q e_i r_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub state: usize,
    /// One value per step; the last value is held beyond the end.
    pub values: Vec<f64>,
}

impl Reference {
    pub fn at(&self, t: usize) -> f64 {
        self.values[t.min(self.values.len() - 1)]
    }

    /// Square wave between `low` and `high`, switching every `half_period` steps.
    pub fn square(state: usize, low: f64, high: f64, half_period: usize, steps: usize) -> Self {
        let values = (0..steps)
            .map(|t| if (t / half_period.max(1)) % 2 == 0 { low } else { high })
            .collect();
        Self { state, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub steps: usize,
    /// Standard deviation of the zero-mean forecast error, per disturbance channel.
    pub forecast_noise: Vec<f64>,
    pub seed: u64,
    pub injection: Option<StateInjection>,
    pub reference: Option<Reference>,
    /// Also solve every step from a cold start (not applied) to compare iteration counts.
    pub compare_cold: bool,
}

impl ScenarioConfig {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            forecast_noise: Vec::new(),
            seed: 0,
            injection: None,
            reference: None,
            compare_cold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// Measured state the controller saw (after any injection).
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub solve_ms: f64,
    pub cold_iterations: Option<usize>,
    pub cold_ms: Option<f64>,
    pub reference: Option<f64>,
    /// `‖f(x, u, ŵ_0) − x⁺‖∞` between the one-step model prediction and the plant.
    pub prediction_error: f64,
    pub coupling_inf: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub final_state: Vec<f64>,
}

impl EpisodeLog {
    /// Columns `t, x1..xn, u1..um, iters, solve_ms, status, cold_iters, reference`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        let (nx, nu) = self.steps.first().map_or((0, 0), |s| (s.x.len(), s.u.len()));
        for i in 0..nx {
            let _ = write!(out, ",x{}", i + 1);
        }
        for i in 0..nu {
            let _ = write!(out, ",u{}", i + 1);
        }
        out.push_str(",iters,solve_ms,status,cold_iters,reference\n");
        for s in &self.steps {
            let _ = write!(out, "{}", s.t);
            for v in s.x.iter().chain(&s.u) {
                let _ = write!(out, ",{v}");
            }
            let status = serde_json::to_value(s.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                ",{},{:.6},{},{},{}",
                s.iterations,
                s.solve_ms,
                status,
                s.cold_iterations.map_or(String::new(), |c| c.to_string()),
                s.reference.map_or(String::new(), |r| r.to_string()),
            );
        }
        out
    }
}

/// Runs one episode. Solver errors abort the episode; an unconverged solve
/// still applies its (input-feasible) first move.
pub fn run_closed_loop(
    plant: &PlantModel,
    controller: &mut Controller<f64>,
    scenario: &ScenarioConfig,
) -> Result<EpisodeLog> {
    let nx = plant.dynamics.nx();
    let nw = plant.dynamics.nw();
    let n = controller.problem.horizon;
    check_dim("plant state", nx, plant.x0.len())?;
    check_dim("plant disturbance rows", nw, plant.disturbance.nrows())?;
    if plant.disturbance.ncols() == 0 && nw > 0 {
        return Err(Error::InvalidConfig("plant disturbance is empty".into()));
    }
    let noise: Vec<Option<Normal<f64>>> = (0..nw)
        .map(|i| {
            let sd = scenario.forecast_noise.get(i).copied().unwrap_or(0.0);
            if sd > 0.0 {
                Normal::new(0.0, sd).ok()
            } else {
                None
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let q_state = controller.problem.cost.state_weight.clone();
    let q_term = controller.problem.cost.terminal_weight.clone();
    controller.reset();

    let mut x = plant.x0.clone();
    let mut log = EpisodeLog::default();
    for t in 0..scenario.steps {
        let mut forecast = plant.actual_window(t, n);
        for (i, dist) in noise.iter().enumerate() {
            if let Some(d) = dist {
                for j in 0..n {
                    forecast[(i, j)] += d.sample(&mut rng);
                }
            }
        }
        if let Some(inj) = scenario.injection.filter(|inj| inj.step == t) {
            x[inj.state] = inj.value;
        }
        let reference = scenario.reference.as_ref().map(|r| {
            let v = r.at(t);
            let q = -(q_state.column(r.state) * v);
            let qn = -(q_term.column(r.state) * v);
            (v, q, qn)
        });
        if let Some((_, q, qn)) = &reference {
            controller.set_state_linear(q, qn)?;
        }
        let start = Instant::now();
        let (u, result) = controller.mpc_step(&x, &forecast)?;
        let solve_ms = start.elapsed().as_secs_f64() * 1e3;
        let (cold_iterations, cold_ms) = if scenario.compare_cold {
            let solver = &controller.solver;
            let c0 = Instant::now();
            let cold = solver.solve(&solver.cold_start()?)?;
            (Some(cold.iterations), Some(c0.elapsed().as_secs_f64() * 1e3))
        } else {
            (None, None)
        };
        let predicted = controller
            .problem
            .dynamics
            .step(&x, &u, &forecast.column(0).into_owned())?;
        let next = plant.dynamics.step(&x, &u, &plant.actual(t))?;
        log.steps.push(StepRecord {
            t,
            x: x.iter().copied().collect(),
            u: u.iter().copied().collect(),
            status: result.status,
            iterations: result.iterations,
            solve_ms,
            cold_iterations,
            cold_ms,
            reference: reference.map(|r| r.0),
            prediction_error: (&predicted - &next).amax(),
            coupling_inf: result.coupling_inf,
        });
        x = next;
    }
    log.final_state = x.iter().copied().collect();
    Ok(log)
}

/// Initial building state (°C) used by the bundled scenarios.
pub const BUILDING_X0: [f64; 4] = [23.0, 22.5, 12.0, 30.0];

/// Step index of 10:00 at the building sampling period.
pub const WINDOW_OPEN_STEP: usize = 40;

/// Occupant opens the window at 10:00: `T_in ← 20 °C`.
pub fn window_open() -> StateInjection {
    StateInjection {
        step: WINDOW_OPEN_STEP,
        state: 0,
        value: 20.0,
    }
}

pub fn building_plant(disturbance: DMatrix<f64>) -> PlantModel {
    PlantModel {
        dynamics: crate::sim::models::building_dynamics(),
        x0: DVector::from_column_slice(&BUILDING_X0),
        disturbance,
    }
}

/// Motor at rest on its equilibrium for speed `v0`, with the constant load input.
pub fn motor_plant(dt: f64, v0: f64) -> Result<PlantModel> {
    let p = crate::sim::models::MotorParams::default();
    let (_, current) = crate::sim::models::motor_equilibrium(&p, v0)
        .ok_or_else(|| Error::InvalidConfig(format!("no equilibrium at speed {v0}")))?;
    Ok(PlantModel {
        dynamics: crate::sim::models::motor_dynamics(&p, dt),
        x0: DVector::from_column_slice(&[current, v0]),
        disturbance: DMatrix::from_element(1, 1, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::models::{building_model, motor_equilibrium, motor_model, MotorParams};
    use crate::sim::weather::WinterProfile;
    use crate::solver::SolverConfig;
    use nalgebra::dvector;

    fn building_plant() -> PlantModel {
        let p = building_model::<f64>();
        PlantModel {
            dynamics: p.dynamics,
            x0: dvector![23.0, 22.5, 12.0, 30.0],
            disturbance: WinterProfile::default().generate(15.0, 1).data,
        }
    }

    fn controller() -> Controller<f64> {
        Controller::new(
            building_model(),
            SolverConfig {
                workers: 1,
                ..SolverConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn perfect_model_has_zero_prediction_error() {
        let log = run_closed_loop(&building_plant(), &mut controller(), &ScenarioConfig::new(6)).unwrap();
        assert_eq!(log.steps.len(), 6);
        for s in &log.steps {
            assert!(s.prediction_error <= 1e-9);
            assert!(s.u[0] >= 0.0 && s.u[0] <= 1.0);
        }
    }

    #[test]
    fn seeded_episodes_repeat() {
        let sc = ScenarioConfig {
            forecast_noise: vec![0.02, 0.5],
            seed: 9,
            ..ScenarioConfig::new(4)
        };
        let plant = building_plant();
        let a = run_closed_loop(&plant, &mut controller(), &sc).unwrap();
        let b = run_closed_loop(&plant, &mut controller(), &sc).unwrap();
        let strip = |l: &EpisodeLog| l.steps.iter().map(|s| (s.x.clone(), s.u.clone(), s.iterations)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert!(a.steps.iter().any(|s| s.prediction_error > 0.0));
    }

    #[test]
    fn injection_overrides_measurement() {
        let sc = ScenarioConfig {
            injection: Some(StateInjection { step: 2, state: 0, value: 20.0 }),
            ..ScenarioConfig::new(3)
        };
        let log = run_closed_loop(&building_plant(), &mut controller(), &sc).unwrap();
        assert_eq!(log.steps[2].x[0], 20.0);
        assert!(log.steps[2].u[0] >= 0.0 && log.steps[2].u[0] <= 1.0);
        let csv = log.to_csv();
        assert!(csv.starts_with("t,x1,x2,x3,x4,u1,iters,solve_ms,status,cold_iters,reference\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn motor_follows_reference_change() {
        let p = MotorParams::default();
        let (_, i) = motor_equilibrium(&p, 16.0).unwrap();
        let prob = motor_model::<f64>(0.01, 16.0);
        let plant = PlantModel {
            dynamics: prob.dynamics.clone(),
            x0: dvector![i, 16.0],
            disturbance: DMatrix::from_element(1, 1, 1.0),
        };
        let mut c = Controller::new(prob, SolverConfig { workers: 1, ..SolverConfig::default() }).unwrap();
        let sc = ScenarioConfig {
            reference: Some(Reference::square(1, 16.0, 20.0, 20, 40)),
            ..ScenarioConfig::new(40)
        };
        let log = run_closed_loop(&plant, &mut c, &sc).unwrap();
        assert!((log.steps[19].x[1] - 16.0).abs() < 0.05);
        assert!((log.final_state[1] - 20.0).abs() < 0.05);
        assert_eq!(log.steps[25].reference, Some(20.0));
    }
}
