mod common;

use bilinear_mpc::oracle::{dense_linear_mpc, kkt_residual};
use bilinear_mpc::problem::SplitProblem;
use bilinear_mpc::solver::{MuSchedule, SolveStatus, Solver, SolverConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(tol: f64) -> SolverConfig {
    SolverConfig {
        tol,
        workers: 1,
        ..SolverConfig::default()
    }
}

fn split(seed: u64, nx: usize, nu: usize, n: usize, bilinear: bool) -> SplitProblem<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    common::random_split(&mut rng, nx, nu, n, bilinear)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn linear_instances_match_the_dense_qp(seed in any::<u64>(), nx in 1usize..=3, nu in 1usize..=2, n in 2usize..=8) {
        let nu = nu.min(4 - nx);
        let s = split(seed, nx, nu, n, false);
        let dense = dense_linear_mpc(&s).unwrap();
        // penalty growth well above the active multipliers
        let cfg = SolverConfig { mu: MuSchedule { base: 1e3, ..MuSchedule::default() }, ..config(1e-8) };
        let solver = Solver::new(s, cfg).unwrap();
        let res = solver.solve(&solver.cold_start().unwrap()).unwrap();
        prop_assert_eq!(res.status, SolveStatus::Converged);
        let gap = (res.objective - dense.objective).abs() / (1.0 + dense.objective.abs());
        prop_assert!(gap <= 1e-6, "cost gap {}", gap);
        prop_assert!(res.trajectory.max_abs_diff(&dense.trajectory) <= 1e-5);
    }

    #[test]
    fn every_iterate_respects_the_input_set(seed in any::<u64>(), nx in 1usize..=3, n in 2usize..=8) {
        let s = split(seed, nx, 1, n, true);
        let cfg = SolverConfig { record_iterates: true, max_iter: 40, ..config(1e-8) };
        let solver = Solver::new(s.clone(), cfg).unwrap();
        let res = solver.solve(&solver.cold_start().unwrap()).unwrap();
        for y in res.iterates.iter().chain([&res.trajectory]) {
            for k in 1..=n {
                prop_assert!(s.input_set.contains(&y.input(k, 1), 1e-9));
                prop_assert!(s.stage_set.contains(&y.xi[k], 1e-9));
            }
        }
        prop_assert!(s.input_set.contains(&res.u0, 1e-9));
    }
}

#[test]
fn default_penalty_stalls_when_active_multipliers_are_large() {
    let s = split(8742280334621223436, 3, 1, 6, false);
    let dense = dense_linear_mpc(&s).unwrap();
    assert!(dense.lambda[0].amax() > 5.0);
    let solver = Solver::new(s.clone(), config(1e-8)).unwrap();
    let stuck = solver.solve(&solver.cold_start().unwrap()).unwrap();
    assert_eq!(stuck.status, SolveStatus::MaxIter);
    let tail = &stuck.log[stuck.log.len() - 10..];
    assert!(tail.iter().all(|r| r.mu == MuSchedule::default().min && r.coupling_inf > 1e-3));
    let cfg = SolverConfig { mu: MuSchedule { base: 10.0, ..MuSchedule::default() }, ..config(1e-8) };
    let solver = Solver::new(s, cfg).unwrap();
    let res = solver.solve(&solver.cold_start().unwrap()).unwrap();
    assert!(res.converged());
    assert!(res.trajectory.max_abs_diff(&dense.trajectory) <= 1e-6);
}

#[test]
fn converged_results_satisfy_the_optimality_conditions() {
    let tol = 1e-7;
    let mut checked = 0;
    for seed in 0..12 {
        let s = split(seed, 2, 1, 6, true);
        let solver = Solver::new(s.clone(), config(tol)).unwrap();
        let res = solver.solve(&solver.cold_start().unwrap()).unwrap();
        if !res.converged() {
            continue;
        }
        checked += 1;
        let r = kkt_residual(&s, &res.trajectory, &res.lambda, &res.stage_duals).unwrap();
        assert!(r.primal <= tol, "seed {seed}: {r:?}");
        assert!(r.stationarity <= 100.0 * tol * (1.0 + res.lambda.iter().map(|l| l.amax()).fold(0.0, f64::max)), "seed {seed}: {r:?}");
        assert!(r.complementarity <= 1e-8, "seed {seed}: {r:?}");
        assert!(res.coupling_inf <= tol && res.prox_inf <= tol);
    }
    assert!(checked >= 8, "only {checked} of 12 converged");
}

#[test]
fn worker_count_does_not_change_results() {
    let s = split(3, 2, 2, 10, true);
    let cfg = SolverConfig { record_iterates: true, ..config(1e-8) };
    let one = Solver::new(s.clone(), cfg.clone()).unwrap();
    let four = Solver::new(s, SolverConfig { workers: 4, ..cfg }).unwrap();
    assert_eq!(four.workers(), 4);
    let init = one.cold_start().unwrap();
    let a = one.solve(&init).unwrap();
    let b = four.solve(&init).unwrap();
    assert_eq!(a.iterates, b.iterates);
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.lambda, b.lambda);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn restarting_from_the_returned_state_is_cheap() {
    for seed in 0..6 {
        let s = split(seed, 2, 1, 8, true);
        let solver = Solver::new(s, config(1e-6)).unwrap();
        let cold = solver.solve(&solver.cold_start().unwrap()).unwrap();
        if !cold.converged() {
            continue;
        }
        let warm = solver.solve(&cold.next).unwrap();
        assert!(warm.converged());
        assert!(warm.iterations <= cold.iterations.min(3), "seed {seed}: {} vs {}", warm.iterations, cold.iterations);
        assert!(warm.trajectory.max_abs_diff(&cold.trajectory) <= 1e-4);
    }
}
