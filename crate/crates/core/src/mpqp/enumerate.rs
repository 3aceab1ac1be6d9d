use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};

use super::tree::{SearchTree, DEFAULT_MAX_DEPTH};
use super::{CriticalRegion, PwaSolutionMap, StageMpqp};
use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::lp::{chebyshev_radius, maximize, Halfspaces, LpValue};
use crate::problem::Polyhedron;
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone)]
pub struct EnumerationOptions {
    /// Hard cap on accepted regions; exceeding it is an error.
    pub max_regions: usize,
    /// Minimum Chebyshev radius for a region to count as full-dimensional.
    pub interior_radius: f64,
    /// Relative eigenvalue threshold of `P_A P_Aᵀ` for LICQ.
    pub licq_tol: f64,
    pub max_tree_depth: usize,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self {
            max_regions: 10_000,
            interior_radius: 1e-9,
            licq_tol: 1e-10,
            max_tree_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

fn rows_of<T: Real>(m: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

pub(crate) fn to_halfspaces<T: Real>(poly: &Polyhedron<T>) -> Halfspaces {
    let mut hs = Halfspaces::new(poly.dim());
    for i in 0..poly.rows() {
        hs.push(
            poly.lhs.row(i).iter().map(|&x| to_f64(x)).collect(),
            to_f64(poly.rhs[i]),
        );
    }
    hs
}

fn licq_holds<T: Real>(pa: &DMatrix<T>, tol: f64) -> bool {
    if pa.nrows() > pa.ncols() {
        return false;
    }
    let gram = pa * pa.transpose();
    let ev = gram.symmetric_eigenvalues();
    let max = ev.amax();
    max > T::zero() && ev.iter().all(|&e| e > lit::<T>(tol) * max)
}

/// `{y : P_A y = p_A, P y ≤ p}` nonempty.
fn face_nonempty<T: Real>(set: &Polyhedron<T>, active: &[usize]) -> bool {
    let hs = to_halfspaces(set);
    let eq: Vec<(Vec<f64>, f64)> = active
        .iter()
        .map(|&i| (hs.a[i].clone(), hs.b[i]))
        .collect();
    !matches!(maximize(&vec![0.0; set.dim()], &hs, &eq), LpValue::Infeasible)
}

/// Affine primal/dual laws and the (unit-row) region for one active set.
/// Returns `None` if the region is trivially empty (a zero row with negative rhs).
fn region_for<T: Real>(
    qp: &StageMpqp<T>,
    hinv: &DMatrix<T>,
    active: &[usize],
) -> Option<CriticalRegion<T>> {
    let n = qp.dim();
    let p = &qp.set.lhs;
    let pr = &qp.set.rhs;
    let (gain, offset, dual_gain, dual_offset) = if active.is_empty() {
        (-hinv.clone(), DVector::zeros(n), DMatrix::zeros(0, n), DVector::zeros(0))
    } else {
        let pa = rows_of(p, active);
        let pa_rhs = DVector::from_iterator(active.len(), active.iter().map(|&i| pr[i]));
        let w_pat = hinv * pa.transpose();
        let k_inv = (&pa * &w_pat).try_inverse()?;
        // λ_A = −K⁻¹ (P_A W θ + p_A)
        let dual_gain = -(&k_inv * &pa * hinv);
        let dual_offset = -(&k_inv * pa_rhs);
        // y = −W (θ + P_Aᵀ λ_A)
        let gain = -hinv - &w_pat * &dual_gain;
        let offset = -(&w_pat * &dual_offset);
        (gain, offset, dual_gain, dual_offset)
    };

    let mut rows: Vec<(DVector<T>, T)> = Vec::new();
    for i in 0..p.nrows() {
        if active.binary_search(&i).is_ok() {
            continue;
        }
        let a = (p.row(i) * &gain).transpose();
        let b = pr[i] - (p.row(i) * &offset)[0];
        rows.push((a, b));
    }
    for j in 0..active.len() {
        rows.push((-dual_gain.row(j).transpose(), dual_offset[j]));
    }

    let zero_tol = lit::<T>(1e-12);
    let mut kept: Vec<(DVector<T>, T)> = Vec::new();
    for (a, b) in rows {
        let norm = a.norm();
        if norm <= zero_tol {
            if b < -lit::<T>(super::MEMBERSHIP_TOL) {
                return None;
            }
            continue;
        }
        kept.push((a / norm, b / norm));
    }
    let lhs = DMatrix::from_fn(kept.len(), n, |i, j| kept[i].0[j]);
    let rhs = DVector::from_iterator(kept.len(), kept.iter().map(|r| r.1));
    Some(CriticalRegion {
        active_set: active.to_vec(),
        gain,
        offset,
        region: Polyhedron { lhs, rhs },
        dual_gain,
        dual_offset,
    })
}

/// Breadth-first enumeration of optimal active sets starting from `∅`.
///
/// Children of an active set are formed by adding one more row. Sets whose
/// face `{P_A y = p_A} ∩ Ξ` is empty or which violate LICQ are not expanded;
/// supersets of such sets share the defect. Regions without interior are
/// discarded but still expanded, since a superset can own a full-dimensional
/// region.
pub fn enumerate_regions<T: Real>(
    qp: &StageMpqp<T>,
    opts: &EnumerationOptions,
) -> Result<PwaSolutionMap<T>> {
    if qp.rhs_param.is_some() {
        return Err(Error::InvalidConfig(
            "parameter-dependent constraint right-hand sides are not supported".into(),
        ));
    }
    let n = qp.dim();
    let m = qp.set.rows();
    let hinv = spd_inverse(&qp.hessian).ok_or(Error::NotPositiveDefinite("stage Hessian"))?;
    if m > 0 && chebyshev_radius(&to_halfspaces(&qp.set), 1.0).is_none_or(|(_, r)| r < 0.0) {
        return Err(Error::StageInfeasible { stage: 0 });
    }

    let mut regions = Vec::new();
    let mut skipped = Vec::new();
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut queue: VecDeque<Vec<usize>> = VecDeque::new();
    seen.insert(Vec::new());
    queue.push_back(Vec::new());

    while let Some(active) = queue.pop_front() {
        if !active.is_empty() {
            let pa = rows_of(&qp.set.lhs, &active);
            if !licq_holds(&pa, opts.licq_tol) {
                skipped.push(active);
                continue;
            }
            if !face_nonempty(&qp.set, &active) {
                continue;
            }
        }
        if let Some(region) = region_for(qp, &hinv, &active) {
            let hs = to_halfspaces(&region.region);
            let interior = hs.a.is_empty()
                || chebyshev_radius(&hs, 1.0).is_some_and(|(_, r)| r > opts.interior_radius);
            if interior {
                if regions.len() >= opts.max_regions {
                    return Err(Error::RegionBudget {
                        limit: opts.max_regions,
                    });
                }
                regions.push(region);
            }
        }
        if active.len() < n {
            for j in 0..m {
                if active.contains(&j) {
                    continue;
                }
                let mut child = active.clone();
                child.push(j);
                child.sort_unstable();
                if seen.insert(child.clone()) {
                    queue.push_back(child);
                }
            }
        }
    }

    let tree = SearchTree::build(&regions, opts.max_tree_depth);
    Ok(PwaSolutionMap {
        qp: qp.clone(),
        regions,
        tree,
        domain: Polyhedron::whole_space(n),
        skipped_degenerate: skipped,
    })
}
