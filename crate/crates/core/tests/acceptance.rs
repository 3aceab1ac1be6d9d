//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use bilinear_mpc::mpqp::{default_sample_box, EnumerationOptions};
use bilinear_mpc::oracle::{
    check_lagrangian_hessian, check_stage_gradients, dense_kkt_solve, dense_linear_mpc, grid_oracle, GRADIENT_TOL,
    HESSIAN_TOL,
};
use bilinear_mpc::problem::{BilinearMpcProblem, SplitProblem};
use bilinear_mpc::sim::models::{
    building_model, motor_equilibrium, motor_model, motor_model_with, MotorParams, COMFORT_BAND, MOTOR_DT,
    SPEED_BAND,
};
use bilinear_mpc::sim::monte_carlo::REPORTED_TIMES;
use bilinear_mpc::sim::weather::bundled_winter_day;
use bilinear_mpc::sim::{
    building_plant, monte_carlo, motor_plant, run_closed_loop, window_open, MonteCarloConfig, Reference,
    ScenarioConfig,
};
use bilinear_mpc::solver::{Controller, SolveStatus, Solver, SolverConfig};
use bilinear_mpc::stage::StageMaps;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn config(tol: f64) -> SolverConfig {
    SolverConfig {
        tol,
        workers: 1,
        ..SolverConfig::default()
    }
}

fn stage_maps(p: &BilinearMpcProblem<f64>, rho: f64) -> StageMaps<f64> {
    let s = SplitProblem::build(p, &DVector::zeros(p.nx()), rho).unwrap();
    StageMaps::build(&s, &EnumerationOptions::default()).unwrap()
}

fn mpqp_oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut details = Vec::new();
    let mut pass = true;
    for (name, p) in [("building", building_model::<f64>()), ("motor", motor_model(MOTOR_DT, 18.0))] {
        let start = Instant::now();
        let maps = stage_maps(&p, 1.0);
        let (mut worst, mut bad) = (0.0f64, 0usize);
        for map in &maps.maps {
            let bx = default_sample_box(map);
            for _ in 0..1000 {
                let y = DVector::from_fn(map.qp.dim(), |i, _| rng.random_range(bx.lower[i]..=bx.upper[i]));
                let theta = -(&map.qp.hessian * y);
                let reference = map.qp.solve_active_set(&theta).unwrap().y;
                let dev = match map.eval(&theta) {
                    Ok(e) => (&e.y - &reference).norm() / (1.0 + reference.norm()),
                    Err(_) => f64::INFINITY,
                };
                worst = worst.max(dev);
                bad += usize::from(!(dev <= 1e-7));
            }
        }
        let secs = start.elapsed().as_secs_f64();
        pass &= bad == 0 && secs < 5.0;
        details.push(format!(
            "{name}: {} regions, worst {worst:.1e}, {bad} misses, {secs:.2} s",
            maps.maps.iter().map(|m| m.region_count()).sum::<usize>()
        ));
    }
    verdict(pass, details.join("; "))
}

fn horizon_independence() -> Verdict {
    let counts = |make: &dyn Fn(usize) -> BilinearMpcProblem<f64>| -> (usize, Vec<usize>) {
        let maps = stage_maps(&make(5), 1.0);
        let long = stage_maps(&make(50), 1.0);
        (
            maps.maps.len() + long.maps.len(),
            maps.maps.iter().chain(&long.maps).map(|m| m.region_count()).collect(),
        )
    };
    let building = |n: usize| {
        let mut p = building_model::<f64>();
        p.horizon = n;
        p.disturbance = DMatrix::zeros(2, n);
        p
    };
    let motor = |n: usize| motor_model_with(&MotorParams::default(), MOTOR_DT, 18.0, n);
    let (nb, b) = counts(&building);
    let (nm, m) = counts(&motor);
    let pass = nb == 2 && nm == 2 && b[0] == b[1] && m[0] == m[1];
    verdict(pass, format!("building regions N=5/50: {b:?}; motor: {m:?}"))
}

fn time_sweep(n: usize, reps: usize) -> Duration {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = common::random_split(&mut rng, 4, 2, n, true);
    let k = common::random_kkt(&mut rng, &s);
    let _ = k.schur_solve().unwrap();
    (0..5)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..reps {
                std::hint::black_box(k.schur_solve().unwrap());
            }
            t.elapsed()
        })
        .min()
        .unwrap()
}

fn schur_sweep() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let nx = rng.random_range(1..=6);
        let nu = rng.random_range(1..=2);
        let n = rng.random_range(1..=20);
        let s = common::random_split(&mut rng, nx, nu, n, true);
        let k = common::random_kkt(&mut rng, &s);
        let dense = dense_kkt_solve(&k).unwrap();
        let sweep = k.schur_solve().unwrap().to_vector();
        worst = worst.max((&sweep - &dense).norm() / (1.0 + dense.norm()));
    }
    let ratio = time_sweep(80, 200).as_secs_f64() / time_sweep(10, 200).as_secs_f64();
    let pass = worst <= 1e-8 && (4.0..=16.0).contains(&ratio);
    verdict(pass, format!("worst relative gap {worst:.1e} over 50 instances; time(N=80)/time(N=10) = {ratio:.2}"))
}

fn derivative_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut g, mut h) = (0.0f64, 0.0f64);
    let mut leak = 0.0f64;
    for _ in 0..20 {
        let nx = rng.random_range(1..=4);
        let nu = rng.random_range(1..=2);
        let n = rng.random_range(1..=5);
        let s = common::random_split(&mut rng, nx, nu, n, true);
        let y = common::random_point(&mut rng, &s);
        let lambda = common::random_duals(&mut rng, &s, 1.0);
        g = g.max(check_stage_gradients(&s, &y).unwrap().max_rel_deviation);
        let rh = check_lagrangian_hessian(&s, &y, &lambda).unwrap();
        h = h.max(rh.max_rel_deviation);
        leak = leak.max(rh.band_leak);
    }
    let pass = g <= GRADIENT_TOL && h <= HESSIAN_TOL && leak <= HESSIAN_TOL;
    verdict(pass, format!("gradient {g:.1e} (≤ {GRADIENT_TOL:.0e}), Hessian {h:.1e} (≤ {HESSIAN_TOL:.0e}), off-band {leak:.1e}"))
}

fn linear_case() -> Verdict {
    let mut p = building_model::<f64>();
    p.dynamics.c.iter_mut().for_each(|c| c.fill(0.0));
    let w = bundled_winter_day().unwrap().window(0, p.horizon);
    let p = p.with_disturbance(w).unwrap();
    let x0 = DVector::from_column_slice(&[22.5, 22.0, 12.0, 28.0]);
    let s = SplitProblem::build(&p, &x0, 1.0).unwrap();
    let solver = Solver::new(s.clone(), config(1e-8)).unwrap();
    let res = solver.solve(&solver.cold_start().unwrap()).unwrap();
    let dense = dense_linear_mpc(&s).unwrap();
    let cost_gap = (res.objective - dense.objective).abs() / dense.objective.abs().max(1e-12);
    let traj_gap = res.trajectory.max_abs_diff(&dense.trajectory);
    let active = res.active.iter().filter(|a| !a.is_empty()).count();
    let pass = res.converged() && cost_gap <= 1e-6 && traj_gap <= 1e-5;
    verdict(
        pass,
        format!(
            "{} iterations, relative cost gap {cost_gap:.1e}, trajectory gap {traj_gap:.1e}, {active} stages with active constraints",
            res.iterations
        ),
    )
}

fn global_quality() -> Verdict {
    let start = Instant::now();
    let mp = MotorParams::default();
    let p = motor_model_with(&mp, MOTOR_DT, SPEED_BAND.1, 2);
    let (_, current) = motor_equilibrium(&mp, SPEED_BAND.0).unwrap();
    let x0 = DVector::from_column_slice(&[current, SPEED_BAND.0]);
    let s = SplitProblem::build(&p, &x0, 1.0).unwrap();
    let solver = Solver::new(s, config(1e-8)).unwrap();
    let res = solver.solve(&solver.cold_start().unwrap()).unwrap();
    let (xs, us) = res.trajectory.unpack(1);
    let cost = p.objective(&xs, &us);
    let grid = grid_oracle(&p, &x0, 201).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = res.converged() && cost <= grid.cost * (1.0 + 1e-3) && secs < 30.0;
    verdict(
        pass,
        format!(
            "solver cost {cost:.6} (u = {:.4}, {:.4}), grid cost {:.6} (u = {:.4}, {:.4}), {secs:.2} s",
            us[0][0], us[1][0], grid.cost, grid.inputs[0], grid.inputs[1]
        ),
    )
}

/// Least-squares slope of `log e_{k+1}` against `log e_k`.
fn fitted_order(errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = errors.windows(2).map(|w| (w[0].ln(), w[1].ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn quadratic_convergence() -> Verdict {
    let mp = MotorParams::default();
    let p = motor_model::<f64>(MOTOR_DT, 18.0);
    let (_, current) = motor_equilibrium(&mp, 17.0).unwrap();
    let x0 = DVector::from_column_slice(&[current, 17.0]);
    let s = SplitProblem::build(&p, &x0, 1.0).unwrap();
    let cfg = SolverConfig {
        record_iterates: true,
        ..config(1e-10)
    };
    let solver = Solver::new(s, cfg).unwrap();
    let res = solver.solve(&solver.cold_start().unwrap()).unwrap();
    let errors: Vec<f64> = res
        .iterates
        .iter()
        .map(|y| y.max_abs_diff(&res.trajectory))
        .filter(|&e| e > 1e-13)
        .collect();
    let tail = &errors[errors.len().saturating_sub(4)..];
    let order = if tail.len() >= 3 { fitted_order(tail) } else { f64::NAN };
    let pass = res.converged() && order >= 1.5;
    let shown: Vec<String> = tail.iter().map(|e| format!("{e:.1e}")).collect();
    verdict(
        pass,
        format!("{} iterations, tail errors [{}], fitted order {order:.2}", res.iterations, shown.join(", ")),
    )
}

fn closed_loop_building() -> Verdict {
    let plant = building_plant(bundled_winter_day().unwrap().data);
    let cfg = MonteCarloConfig {
        solver: config(1e-6),
        ..MonteCarloConfig::default()
    };
    let report = monte_carlo(&building_model(), &plant, &cfg).unwrap();
    let mut pass = true;
    let mut rows = Vec::new();
    for r in &report.rows {
        let ok = r.converged_steps == r.steps
            && r.max_iterations <= 100
            && r.warm_mean_iterations < r.cold_mean_iterations
            && r.max_state_violation <= 0.1
            && r.max_input_violation == 0.0;
        pass &= ok;
        let reported = REPORTED_TIMES.iter().find(|p| p.0 == r.tolerance);
        rows.push(format!(
            "tol {:.0e}: {}/{} converged, iters max {} warm {:.2} cold {:.2}, T_in violation {:.1e}, {:.3}/{:.3} ms max/mean (reported {})",
            r.tolerance,
            r.converged_steps,
            r.steps,
            r.max_iterations,
            r.warm_mean_iterations,
            r.cold_mean_iterations,
            r.max_state_violation,
            r.max_ms,
            r.mean_ms,
            reported.map_or("n/a".into(), |p| format!("{:.3}/{:.3}", p.1, p.2)),
        ));
    }
    verdict(pass, rows.join("; "))
}

fn infeasible_start() -> Verdict {
    let plant = building_plant(bundled_winter_day().unwrap().data);
    let inj = window_open();
    let cfg = MonteCarloConfig {
        tolerances: vec![1e-6],
        injection: Some(inj),
        compare_cold: false,
        solver: config(1e-6),
        ..MonteCarloConfig::default()
    };
    let report = match monte_carlo(&building_model(), &plant, &cfg) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("episode aborted: {e}")),
    };
    let (lo, hi) = COMFORT_BAND;
    let mut worst_recovery = 0;
    let mut input_ok = true;
    let mut recovered_all = true;
    for log in &report.episodes[0] {
        input_ok &= log.steps.iter().all(|s| s.u.iter().all(|&u| (0.0..=1.0).contains(&u)));
        let after = log.steps.iter().skip(inj.step + 1).take(12);
        match after.map(|s| s.t - inj.step).find(|&d| {
            let t = log.steps[inj.step + d].x[0];
            (lo..=hi).contains(&t)
        }) {
            Some(d) => worst_recovery = worst_recovery.max(d),
            None => recovered_all = false,
        }
    }
    let pass = input_ok && recovered_all;
    verdict(
        pass,
        format!(
            "{} episodes, inputs in [0,1]: {input_ok}, slowest re-entry {} steps ({} min)",
            report.episodes[0].len(),
            worst_recovery,
            worst_recovery * 15
        ),
    )
}

fn motor_tracking() -> Verdict {
    let (lo, hi) = SPEED_BAND;
    let steps = 400;
    let half = 100;
    let plant = motor_plant(MOTOR_DT, lo).unwrap();
    let mut controller = Controller::new(motor_model(MOTOR_DT, lo), config(1e-6)).unwrap();
    let scenario = ScenarioConfig {
        reference: Some(Reference::square(1, lo, hi, half, steps)),
        ..ScenarioConfig::new(steps)
    };
    let log = run_closed_loop(&plant, &mut controller, &scenario).unwrap();
    let mut viol = 0.0f64;
    let mut converged = 0;
    for (t, s) in log.steps.iter().enumerate() {
        if s.status != SolveStatus::Converged {
            continue;
        }
        converged += 1;
        let next = log.steps.get(t + 1).map_or(&log.final_state, |n| &n.x);
        for v in [s.x[1], next[1]] {
            viol = viol.max((lo - v).max(v - hi).max(0.0));
        }
    }
    let tracking = (1..=steps / half)
        .map(|j| {
            let t = j * half - 1;
            let x = log.steps.get(t + 1).map_or(&log.final_state, |n| &n.x);
            (x[1] - log.steps[t].reference.unwrap()).abs()
        })
        .fold(0.0, f64::max);
    let mean_ms = log.steps.iter().map(|s| s.solve_ms).sum::<f64>() / steps as f64;
    let pass = viol <= 1e-6 && tracking <= 0.05;
    verdict(
        pass,
        format!(
            "{converged}/{steps} converged, bound violation {viol:.1e}, steady-state error {tracking:.1e}, mean solve {mean_ms:.3} ms (reported 1.764 ms on embedded hardware)"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("mpQP oracle equivalence", mpqp_oracle_equivalence),
        ("horizon-independent stage map", horizon_independence),
        ("Schur sweep vs dense KKT, linear scaling", schur_sweep),
        ("finite-difference derivatives", derivative_exactness),
        ("linear case vs dense QP", linear_case),
        ("global quality vs grid search", global_quality),
        ("local quadratic convergence", quadratic_convergence),
        ("closed-loop building Monte-Carlo", closed_loop_building),
        ("window-open infeasible start", infeasible_start),
        ("motor square-wave tracking", motor_tracking),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!(
            "criterion {:>2} {} | {name} | {} | {:.1} s",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
