mod common;

use bilinear_mpc::oracle::{dense_kkt_solve, dense_slack_solve};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rel(a: f64, scale: f64) -> f64 {
    a / (1.0 + scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sweep_matches_dense_factorization(
        seed in any::<u64>(),
        nx in 1usize..=5,
        nu in 1usize..=2,
        n in 1usize..=12,
        bilinear in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::random_split(&mut rng, nx, nu, n, bilinear);
        let k = common::random_kkt(&mut rng, &s);
        let dense = dense_kkt_solve(&k).unwrap();
        let sol = k.schur_solve().unwrap();
        let v = sol.to_vector();
        prop_assert!(rel((&v - &dense).norm(), dense.norm()) <= 1e-8);
        prop_assert!(k.residual(&sol).amax() <= 1e-8 * (1.0 + dense.amax()));
        prop_assert_eq!((sol.positive, sol.negative), k.expected_inertia());
        prop_assert!(sol.dy[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn slack_elimination_is_exact(seed in any::<u64>(), nx in 1usize..=4, n in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::random_split(&mut rng, nx, 1, n, true);
        let k = common::random_kkt(&mut rng, &s);
        let slack = dense_slack_solve(&k).unwrap();
        let sol = k.schur_solve().unwrap();
        for j in 1..=n {
            let scale = slack.dy[j].amax();
            prop_assert!(rel((&sol.dy[j] - &slack.dy[j]).amax(), scale) <= 1e-9);
            // eliminated slacks equal the active-row image of the step
            let image = &k.active_jac[j - 1] * &sol.dy[j];
            prop_assert!(rel((&image - &slack.slack[j - 1]).amax(), scale) <= 1e-9);
        }
        for j in 0..n {
            let scale = slack.lambda[j].amax();
            prop_assert!(rel((&sol.lambda[j] - &slack.lambda[j]).amax(), scale) <= 1e-9);
        }
    }
}

#[test]
fn solve_time_grows_linearly_in_horizon() {
    use std::time::Instant;
    let time = |n: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = common::random_split(&mut rng, 4, 2, n, true);
        let k = common::random_kkt(&mut rng, &s);
        (0..5)
            .map(|_| {
                let t = Instant::now();
                for _ in 0..50 {
                    std::hint::black_box(k.schur_solve().unwrap());
                }
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let ns = [10usize, 20, 40, 80];
    let ts: Vec<f64> = ns.iter().map(|&n| time(n)).collect();
    let pts: Vec<(f64, f64)> = ns.iter().zip(&ts).map(|(&n, &t)| ((n as f64).ln(), t.ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((0.7..=1.3).contains(&slope), "log-log slope {slope}, times {ts:?}");
}
