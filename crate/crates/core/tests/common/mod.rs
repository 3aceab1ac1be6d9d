#![allow(dead_code)]

use bilinear_mpc::kkt::KktSystem;
use bilinear_mpc::problem::{BilinearDynamics, BilinearMpcProblem, Polyhedron, SplitProblem, StageCost, Trajectory};
use bilinear_mpc::sensitivity::evaluate;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn randn<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn randv<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn spd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> DMatrix<f64> {
    let m = randn(rng, n, n);
    &m * m.transpose() / n as f64 + DMatrix::identity(n, n) * shift
}

/// Random box-constrained problem; `bilinear = false` zeroes every `C_i`.
pub fn random_problem<R: Rng>(rng: &mut R, nx: usize, nu: usize, n: usize, bilinear: bool) -> BilinearMpcProblem<f64> {
    let a = DMatrix::identity(nx, nx) * 0.9 + randn(rng, nx, nx) * (0.2 / (nx as f64).sqrt());
    let b = randn(rng, nx, nu) * 0.5;
    let c = (0..nu)
        .map(|_| if bilinear { randn(rng, nx, nx) * 0.1 } else { DMatrix::zeros(nx, nx) })
        .collect();
    let xb: Vec<f64> = (0..nx).map(|_| rng.random_range(5.0..10.0)).collect();
    let ub: Vec<f64> = (0..nu).map(|_| rng.random_range(1.0..2.0)).collect();
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    BilinearMpcProblem {
        dynamics: BilinearDynamics {
            a,
            b,
            c,
            bw: randn(rng, nx, 1) * 0.1,
        },
        state_set: Polyhedron::from_bounds(&neg(&xb), &xb),
        input_set: Polyhedron::from_bounds(&neg(&ub), &ub),
        cost: StageCost {
            state_weight: spd(rng, nx, 0.1),
            state_linear: randv(rng, nx) * 0.1,
            input_weight: spd(rng, nu, 0.1),
            input_linear: randv(rng, nu) * 0.1,
            terminal_weight: spd(rng, nx, 0.1),
            terminal_linear: randv(rng, nx) * 0.1,
            constant: 0.0,
        },
        horizon: n,
        disturbance: randn(rng, 1, n),
    }
}

pub fn random_split<R: Rng>(rng: &mut R, nx: usize, nu: usize, n: usize, bilinear: bool) -> SplitProblem<f64> {
    let p = random_problem(rng, nx, nu, n, bilinear);
    let x0 = randv(rng, nx);
    SplitProblem::build(&p, &x0, 1.0).unwrap()
}

/// Random stage blocks; each stage gets a random face of its stage set made active.
pub fn random_point<R: Rng>(rng: &mut R, s: &SplitProblem<f64>) -> Trajectory<f64> {
    let mut xi = vec![s.x_init.clone()];
    let set = &s.stage_set;
    for _ in 1..=s.horizon {
        let mut v = randv(rng, s.nxi());
        if set.rows() > 0 && rng.random_bool(0.7) {
            let i = rng.random_range(0..set.rows());
            let a = set.lhs.row(i).transpose();
            v += &a * ((set.rhs[i] - a.dot(&v)) / a.norm_squared());
        }
        xi.push(v);
    }
    Trajectory { xi }
}

pub fn random_duals<R: Rng>(rng: &mut R, s: &SplitProblem<f64>, scale: f64) -> Vec<DVector<f64>> {
    (0..s.horizon).map(|_| randv(rng, s.nx) * scale).collect()
}

/// Coupled KKT system at a random point with geometric activity detection.
pub fn random_kkt<R: Rng>(rng: &mut R, s: &SplitProblem<f64>) -> KktSystem<f64> {
    let y = random_point(rng, s);
    let lambda = random_duals(rng, s, 0.1);
    let pack = evaluate(s, &y, &lambda, None, 1e-9).unwrap();
    let mu = 10f64.powf(rng.random_range(2.0..4.0));
    KktSystem::assemble(&pack, s, &y, mu, 0.0).unwrap()
}
