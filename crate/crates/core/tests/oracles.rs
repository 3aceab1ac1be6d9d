mod common;

use bilinear_mpc::oracle::{dense_linear_mpc, grid_oracle, riccati_lqr};
use bilinear_mpc::problem::{Polyhedron, SplitProblem};
use bilinear_mpc::sim::models::{motor_equilibrium, motor_model_with, MotorParams, MOTOR_DT, SPEED_BAND};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn riccati_matches_dense_qp_without_active_constraints(
        seed in any::<u64>(),
        nx in 1usize..=4,
        nu in 1usize..=2,
        n in 1usize..=10,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = common::random_problem(&mut rng, nx, nu, n, false);
        p.state_set = Polyhedron::from_bounds(&vec![-1e6; nx], &vec![1e6; nx]);
        p.input_set = Polyhedron::from_bounds(&vec![-1e6; nu], &vec![1e6; nu]);
        let x0 = common::randv(&mut rng, nx);
        let s = SplitProblem::build(&p, &x0, 1.0).unwrap();
        let lqr = riccati_lqr(&s).unwrap();
        let dense = dense_linear_mpc(&s).unwrap();
        let scale = 1.0 + dense.trajectory.flatten().amax();
        prop_assert!(lqr.max_abs_diff(&dense.trajectory) <= 1e-8 * scale);
    }
}

#[test]
fn grid_cost_does_not_increase_under_nested_refinement() {
    let mp = MotorParams::default();
    let p = motor_model_with(&mp, MOTOR_DT, SPEED_BAND.1, 2);
    let (_, current) = motor_equilibrium(&mp, SPEED_BAND.0).unwrap();
    let x0 = DVector::from_column_slice(&[current, SPEED_BAND.0]);
    let costs: Vec<f64> = [5, 9, 17, 33]
        .iter()
        .map(|&r| grid_oracle(&p, &x0, r).unwrap().cost)
        .collect();
    for w in costs.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{costs:?}");
    }
}

#[test]
fn grid_optimum_is_consistent_with_its_inputs() {
    let mp = MotorParams::default();
    let p = motor_model_with(&mp, MOTOR_DT, 18.0, 2);
    let (_, current) = motor_equilibrium(&mp, 17.0).unwrap();
    let x0 = DVector::from_column_slice(&[current, 17.0]);
    let g = grid_oracle(&p, &x0, 41).unwrap();
    assert!(g.feasible_points > 0);
    let us: Vec<DVector<f64>> = g.inputs.iter().map(|&u| DVector::from_element(1, u)).collect();
    let xs = p.rollout(&x0, &us).unwrap();
    assert!((p.objective(&xs, &us) - g.cost).abs() <= 1e-9 * (1.0 + g.cost.abs()));
    assert!(us.iter().all(|u| p.input_set.contains(u, 0.0)));
}
