//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves `min ½ yᵀH y + hᵀy  s.t.  A_eq y = b_eq,  P y ≤ p`. The method starts
//! at the unconstrained minimizer and adds violated constraints one at a time,
//! so it needs no feasible starting point and detects infeasibility directly.
//! Multipliers follow the convention `H y + h + A_eqᵀν + Pᵀλ = 0`, `λ ≥ 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::spd_inverse;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T: Real> {
    pub y: DVector<T>,
    /// Sorted indices of active inequality rows.
    pub active: Vec<usize>,
    /// Multipliers of `active`, same order.
    pub dual: DVector<T>,
    /// Multipliers of the equality rows.
    pub eq_dual: DVector<T>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct QpProblem<'a, T: Real> {
    pub hessian: &'a DMatrix<T>,
    pub linear: &'a DVector<T>,
    pub eq: Option<(&'a DMatrix<T>, &'a DVector<T>)>,
    pub ineq: (&'a DMatrix<T>, &'a DVector<T>),
}

/// Multipliers and primal point of the equality-constrained subproblem with
/// rows `rows` (a matrix whose rows are constraint normals) held tight.
struct Tight<T: Real> {
    y: DVector<T>,
    mult: DVector<T>,
}

fn solve_tight<T: Real>(
    hinv: &DMatrix<T>,
    linear: &DVector<T>,
    rows: &DMatrix<T>,
    rhs: &DVector<T>,
) -> Option<Tight<T>> {
    let y_free = -(hinv * linear);
    if rows.nrows() == 0 {
        return Some(Tight {
            y: y_free,
            mult: DVector::zeros(0),
        });
    }
    let hn = hinv * rows.transpose();
    let k = rows * &hn;
    let lu = k.lu();
    // mult = K⁻¹ (A y_free − b), y = y_free − H⁻¹Aᵀ mult
    let mult = lu.solve(&(rows * &y_free - rhs))?;
    let y = y_free - hn * &mult;
    Some(Tight { y, mult })
}

fn gather_rows<T: Real>(p: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), p.ncols(), |i, j| p[(idx[i], j)])
}

pub fn solve_qp<T: Real>(qp: &QpProblem<'_, T>) -> Result<QpSolution<T>> {
    let n = qp.hessian.nrows();
    check_dim("qp hessian columns", n, qp.hessian.ncols())?;
    check_dim("qp linear term", n, qp.linear.len())?;
    let (p, pr) = qp.ineq;
    check_dim("qp inequality columns", n, p.ncols())?;
    check_dim("qp inequality rhs", p.nrows(), pr.len())?;
    let m = p.nrows();
    let hinv = spd_inverse(qp.hessian).ok_or(Error::NotPositiveDefinite("QP Hessian"))?;

    let (eq_rows, eq_rhs) = match qp.eq {
        Some((a, b)) => {
            check_dim("qp equality columns", n, a.ncols())?;
            check_dim("qp equality rhs", a.nrows(), b.len())?;
            (a.clone(), b.clone())
        }
        None => (DMatrix::zeros(0, n), DVector::zeros(0)),
    };
    let n_eq = eq_rows.nrows();

    let eps = lit::<T>(1e-12);
    let feas_tol = |i: usize| lit::<T>(1e-11) * (T::one() + pr[i].abs());

    let tight = solve_tight(&hinv, qp.linear, &eq_rows, &eq_rhs).ok_or(Error::Infeasible)?;
    let mut y = tight.y;
    let mut eq_mult = tight.mult;
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<T> = Vec::new();

    let max_iter = 50 + 10 * (m + n);
    let mut iterations = 0;
    loop {
        // most violated inequality, lowest index on ties
        let mut pick: Option<(usize, T)> = None;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let viol = p.row(i).dot(&y.transpose()) - pr[i];
            if viol > feas_tol(i) && pick.is_none_or(|(_, v)| viol > v) {
                pick = Some((i, viol));
            }
        }
        let Some((add, _)) = pick else { break };
        let a_add = p.row(add).transpose();
        let mut lam_add = T::zero();

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::IterationLimit(max_iter));
            }
            // working normals: equalities first, then active inequalities
            let mut idx_rows = eq_rows.clone();
            if !active.is_empty() {
                let act = gather_rows(p, &active);
                idx_rows = DMatrix::from_fn(n_eq + active.len(), n, |i, j| {
                    if i < n_eq {
                        eq_rows[(i, j)]
                    } else {
                        act[(i - n_eq, j)]
                    }
                });
            }
            let k = idx_rows.nrows();
            let hn_add = &hinv * &a_add;
            let (z, r) = if k == 0 {
                (-hn_add.clone(), DVector::zeros(0))
            } else {
                let hn = &hinv * idx_rows.transpose();
                let kk = &idx_rows * &hn;
                let r = kk
                    .lu()
                    .solve(&(&idx_rows * &hn_add))
                    .ok_or(Error::Infeasible)?;
                (-(hn_add.clone() - hn * &r), r)
            };
            let curv = -a_add.dot(&z);
            // blocking active inequality (equalities never leave)
            let mut t1: Option<(usize, T)> = None;
            for (j, &rj) in r.iter().enumerate().skip(n_eq) {
                if rj > eps {
                    let ratio = mult[j - n_eq] / rj;
                    if t1.is_none_or(|(_, t)| ratio < t) {
                        t1 = Some((j - n_eq, ratio));
                    }
                }
            }
            let viol = a_add.dot(&y) - pr[add];
            if curv <= eps * (T::one() + a_add.norm_squared()) {
                // normal dependent on working set: dual-only step
                let Some((drop, t)) = t1 else {
                    return Err(Error::Infeasible);
                };
                for (j, mj) in mult.iter_mut().enumerate() {
                    *mj -= t * r[n_eq + j];
                }
                for j in 0..n_eq {
                    eq_mult[j] -= t * r[j];
                }
                lam_add += t;
                active.remove(drop);
                mult.remove(drop);
                continue;
            }
            let t2 = viol / curv;
            let (t, full) = match t1 {
                Some((_, tb)) if tb < t2 => (tb, false),
                _ => (t2, true),
            };
            y += &z * t;
            for (j, mj) in mult.iter_mut().enumerate() {
                *mj -= t * r[n_eq + j];
            }
            for j in 0..n_eq {
                eq_mult[j] -= t * r[j];
            }
            lam_add += t;
            if full {
                let pos = active.partition_point(|&a| a < add);
                active.insert(pos, add);
                mult.insert(pos, lam_add);
                break;
            }
            let (drop, _) = t1.expect("partial step has a blocking constraint");
            active.remove(drop);
            mult.remove(drop);
        }
    }

    // polish: exact solve on the final working set
    let mut rows = eq_rows.clone();
    let mut rhs = eq_rhs.clone();
    if !active.is_empty() {
        let act = gather_rows(p, &active);
        rows = DMatrix::from_fn(n_eq + active.len(), n, |i, j| {
            if i < n_eq {
                eq_rows[(i, j)]
            } else {
                act[(i - n_eq, j)]
            }
        });
        rhs = DVector::from_fn(n_eq + active.len(), |i, _| {
            if i < n_eq {
                eq_rhs[i]
            } else {
                pr[active[i - n_eq]]
            }
        });
    }
    if let Some(t) = solve_tight(&hinv, qp.linear, &rows, &rhs) {
        y = t.y;
        eq_mult = t.mult.rows(0, n_eq).into_owned();
        for (j, mj) in mult.iter_mut().enumerate() {
            *mj = t.mult[n_eq + j].max(T::zero());
        }
    }

    Ok(QpSolution {
        y,
        active,
        dual: DVector::from_vec(mult),
        eq_dual: eq_mult,
        iterations,
    })
}

/// Stationarity, feasibility and complementarity residual (max-norm) of a QP solution.
pub fn kkt_residual<T: Real>(qp: &QpProblem<'_, T>, sol: &QpSolution<T>) -> T {
    let (p, pr) = qp.ineq;
    let mut grad = qp.hessian * &sol.y + qp.linear;
    let mut worst = T::zero();
    if let Some((a, b)) = qp.eq {
        grad += a.transpose() * &sol.eq_dual;
        worst = (a * &sol.y - b).amax();
    }
    for (j, &i) in sol.active.iter().enumerate() {
        grad += p.row(i).transpose() * sol.dual[j];
    }
    worst = worst.max(grad.amax());
    let slack = p * &sol.y - pr;
    for i in 0..p.nrows() {
        worst = worst.max(slack[i]);
    }
    for (j, &i) in sol.active.iter().enumerate() {
        worst = worst.max((sol.dual[j] * slack[i]).abs()).max(-sol.dual[j]);
    }
    worst
}
