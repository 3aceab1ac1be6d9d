use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::enumerate::to_halfspaces;
use super::PwaSolutionMap;
use crate::error::Error;
use crate::lp::{maximize, LpValue};
use crate::scalar::{lit, to_f64, Real};

/// Sampling box in primal space; parameters are drawn as `θ = −𝒬 y`
/// so that samples land in interior and saturated regions alike.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

const UNBOUNDED_HALF_WIDTH: f64 = 50.0;

/// Bounding box of the stage set, widened by half its width plus one on each side.
pub fn default_sample_box<T: Real>(map: &PwaSolutionMap<T>) -> SampleBox {
    let n = map.qp.dim();
    let hs = to_halfspaces(&map.qp.set);
    let mut lower = vec![-UNBOUNDED_HALF_WIDTH; n];
    let mut upper = vec![UNBOUNDED_HALF_WIDTH; n];
    for j in 0..n {
        let mut c = vec![0.0; n];
        c[j] = 1.0;
        let hi = match maximize(&c, &hs, &[]) {
            LpValue::Optimal(v) => Some(v),
            _ => None,
        };
        c[j] = -1.0;
        let lo = match maximize(&c, &hs, &[]) {
            LpValue::Optimal(v) => Some(-v),
            _ => None,
        };
        if let (Some(lo), Some(hi)) = (lo, hi) {
            let pad = 0.5 * (hi - lo) + 1.0;
            lower[j] = lo - pad;
            upper[j] = hi + pad;
        } else {
            let mid = lo.or(hi).unwrap_or(0.0);
            lower[j] = lo.map_or(mid - UNBOUNDED_HALF_WIDTH, |l| l - 1.0);
            upper[j] = hi.map_or(mid + UNBOUNDED_HALF_WIDTH, |h| h + 1.0);
        }
    }
    SampleBox { lower, upper }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub samples: usize,
    /// `max ‖y_map − y_qp‖∞ / (1 + ‖y_qp‖∞)`
    pub max_deviation: f64,
    /// Samples inside the domain that no region claimed.
    pub uncovered: usize,
    /// Tree point location disagreeing with a linear scan.
    pub tree_mismatches: usize,
    /// Largest law mismatch at located region boundaries.
    pub max_continuity_jump: f64,
    pub boundary_pairs: usize,
    /// Empirical Lipschitz constant over consecutive sample pairs.
    pub lipschitz: f64,
    pub max_planes_visited: usize,
}

impl MapReport {
    pub fn covered(&self) -> bool {
        self.uncovered == 0
    }
}

fn draw(rng: &mut ChaCha8Rng, b: &SampleBox) -> Vec<f64> {
    b.lower
        .iter()
        .zip(&b.upper)
        .map(|(&lo, &hi)| rng.random_range(lo..=hi))
        .collect()
}

/// Statistical check of a map against the fallback QP solver.
pub fn validate_map<T: Real>(
    map: &PwaSolutionMap<T>,
    samples: usize,
    sample_box: &SampleBox,
    seed: u64,
) -> MapReport {
    let n = map.qp.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = MapReport {
        samples,
        max_deviation: 0.0,
        uncovered: 0,
        tree_mismatches: 0,
        max_continuity_jump: 0.0,
        boundary_pairs: 0,
        lipschitz: 0.0,
        max_planes_visited: 0,
    };
    let mut prev: Option<(DVector<T>, DVector<T>, usize)> = None;
    for _ in 0..samples {
        let y = draw(&mut rng, sample_box);
        let y = DVector::from_iterator(n, y.into_iter().map(lit::<T>));
        let theta = -(&map.qp.hessian * y);
        let reference = match map.qp.solve_active_set(&theta) {
            Ok(s) => s.y,
            Err(_) => continue,
        };
        let eval = match map.eval(&theta) {
            Ok(e) => e,
            Err(Error::OutsideDomain) => {
                report.uncovered += 1;
                prev = None;
                continue;
            }
            Err(_) => continue,
        };
        report.max_planes_visited = report.max_planes_visited.max(eval.planes_visited);
        if map.locate_linear(&theta) != Some(eval.region) {
            // the tree may legitimately pick another region on a shared facet
            let same = map.locate_linear(&theta).is_some_and(|r| {
                (map.regions[r].primal(&theta) - &eval.y).amax() <= lit(1e-9)
            });
            if !same {
                report.tree_mismatches += 1;
            }
        }
        let dev = to_f64((&eval.y - &reference).amax()) / (1.0 + to_f64(reference.amax()));
        report.max_deviation = report.max_deviation.max(dev);

        if let Some((pt, py, pr)) = prev.take() {
            let dt = to_f64((&theta - &pt).norm());
            if dt > 0.0 {
                report.lipschitz = report.lipschitz.max(to_f64((&eval.y - &py).norm()) / dt);
            }
            if pr != eval.region {
                if let Some(jump) = boundary_jump(map, &pt, pr, &theta, eval.region) {
                    report.boundary_pairs += 1;
                    report.max_continuity_jump = report.max_continuity_jump.max(jump);
                }
            }
        }
        prev = Some((theta, eval.y, eval.region));
    }
    report
}

/// Bisects the segment between two samples in different regions and compares
/// the two adjacent laws at the located crossing.
fn boundary_jump<T: Real>(
    map: &PwaSolutionMap<T>,
    a: &DVector<T>,
    ra: usize,
    b: &DVector<T>,
    rb: usize,
) -> Option<f64> {
    let (mut lo, mut hi) = (a.clone(), b.clone());
    let r_lo = ra;
    let mut r_hi = rb;
    for _ in 0..60 {
        let mid = (&lo + &hi) * lit::<T>(0.5);
        let r = map.locate_linear(&mid)?;
        if r == r_lo {
            lo = mid;
        } else {
            hi = mid;
            r_hi = r;
        }
        if (&hi - &lo).amax() <= lit::<T>(1e-12) * (T::one() + hi.amax()) {
            break;
        }
    }
    let mid = (&lo + &hi) * lit::<T>(0.5);
    let y_lo = map.regions[r_lo].primal(&mid);
    let y_hi = map.regions[r_hi].primal(&mid);
    Some(to_f64((y_lo - y_hi).amax()))
}
