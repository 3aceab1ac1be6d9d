//! Thin wrapper over `microlp` for the small polyhedral LPs used while
//! building explicit maps (interiority, face emptiness, support values).

use std::time::Duration;

use microlp::{ComparisonOp, OptimizationDirection, Problem};

/// Wall-clock cap per LP; a solve that hits it is reported as not optimal.
const LP_TIME_LIMIT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LpValue {
    Optimal(f64),
    Unbounded,
    Infeasible,
    /// The solve was cut off before a proof of optimality.
    Unknown,
}

/// Dense halfspace list `{v : a_i·v ≤ b_i}` in `f64`.
#[derive(Debug, Clone, Default)]
pub struct Halfspaces {
    pub dim: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Halfspaces {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            a: Vec::new(),
            b: Vec::new(),
        }
    }

    pub fn push(&mut self, a: Vec<f64>, b: f64) {
        debug_assert_eq!(a.len(), self.dim);
        self.a.push(a);
        self.b.push(b);
    }

    pub fn extend(&mut self, other: &Halfspaces) {
        self.a.extend(other.a.iter().cloned());
        self.b.extend(other.b.iter().copied());
    }
}

/// Radius of the largest ball inside `hs`, capped at `cap`.
/// `None` when the set is empty.
pub fn chebyshev_radius(hs: &Halfspaces, cap: f64) -> Option<(Vec<f64>, f64)> {
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..hs.dim)
        .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let r = lp.add_var(1.0, (f64::NEG_INFINITY, cap));
    lp.set_time_limit(LP_TIME_LIMIT);
    for (row, &b) in hs.a.iter().zip(&hs.b) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut expr: Vec<_> = vars.iter().copied().zip(row.iter().copied()).collect();
        expr.push((r, norm));
        lp.add_constraint(expr.as_slice(), ComparisonOp::Le, b);
    }
    match lp.solve() {
        Ok(outcome) => {
            let sol = outcome.into_solution().ok()?;
            if sol.status() != microlp::SolutionStatus::Optimal {
                return None;
            }
            let center = vars.iter().map(|&v| sol.var_value(v)).collect();
            Some((center, sol.var_value(r)))
        }
        Err(_) => None,
    }
}

/// `max c·v` over `hs` with extra equality rows `eq`.
pub fn maximize(c: &[f64], hs: &Halfspaces, eq: &[(Vec<f64>, f64)]) -> LpValue {
    // microlp reports free columns that appear in no row as unbounded, so
    // they are left out unless they carry cost.
    let used: Vec<bool> = (0..c.len())
        .map(|j| hs.a.iter().chain(eq.iter().map(|(r, _)| r)).any(|row| row[j] != 0.0))
        .collect();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    lp.set_time_limit(LP_TIME_LIMIT);
    let mut vars = Vec::new();
    for (j, &cj) in c.iter().enumerate() {
        if used[j] {
            vars.push((j, lp.add_var(cj, (f64::NEG_INFINITY, f64::INFINITY))));
        } else if cj != 0.0 {
            return match maximize(&vec![0.0; c.len()], hs, eq) {
                LpValue::Infeasible => LpValue::Infeasible,
                LpValue::Unknown => LpValue::Unknown,
                _ => LpValue::Unbounded,
            };
        }
    }
    for (row, &b) in hs.a.iter().zip(&hs.b) {
        let expr: Vec<_> = vars.iter().map(|&(j, v)| (v, row[j])).collect();
        lp.add_constraint(expr.as_slice(), ComparisonOp::Le, b);
    }
    for (row, b) in eq {
        let expr: Vec<_> = vars.iter().map(|&(j, v)| (v, row[j])).collect();
        lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, *b);
    }
    match lp.solve() {
        Ok(outcome) => match outcome.into_solution() {
            Ok(sol) if sol.status() == microlp::SolutionStatus::Optimal => LpValue::Optimal(sol.objective()),
            _ => LpValue::Unknown,
        },
        Err(microlp::Error::Unbounded) => LpValue::Unbounded,
        Err(microlp::Error::Infeasible) => LpValue::Infeasible,
        Err(_) => LpValue::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_radius() {
        let mut hs = Halfspaces::new(2);
        hs.push(vec![1.0, 0.0], 1.0);
        hs.push(vec![-1.0, 0.0], 0.0);
        hs.push(vec![0.0, 1.0], 1.0);
        hs.push(vec![0.0, -1.0], 0.0);
        let (c, r) = chebyshev_radius(&hs, 10.0).unwrap();
        assert!((r - 0.5).abs() < 1e-9);
        assert!((c[0] - 0.5).abs() < 1e-9 && (c[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn halfplane_radius_is_capped_and_empty_set_detected() {
        let mut hs = Halfspaces::new(1);
        hs.push(vec![1.0], 0.0);
        assert_eq!(chebyshev_radius(&hs, 3.0).unwrap().1, 3.0);
        hs.push(vec![-1.0], -1.0);
        let r = chebyshev_radius(&hs, 3.0).map(|x| x.1);
        assert!(r.is_none() || r.unwrap() < 0.0);
        assert_eq!(maximize(&[1.0], &hs, &[]), LpValue::Infeasible);
    }

    #[test]
    fn support_values() {
        let mut hs = Halfspaces::new(1);
        hs.push(vec![1.0], 2.0);
        assert_eq!(maximize(&[1.0], &hs, &[]), LpValue::Optimal(2.0));
        assert_eq!(maximize(&[-1.0], &hs, &[]), LpValue::Unbounded);
    }

    #[test]
    fn untouched_free_columns_do_not_unbound() {
        let mut hs = Halfspaces::new(3);
        hs.push(vec![1.0, 0.0, 0.0], 2.0);
        hs.push(vec![-1.0, 0.0, 0.0], 1.0);
        assert_eq!(maximize(&[1.0, 0.0, 0.0], &hs, &[]), LpValue::Optimal(2.0));
        assert_eq!(maximize(&[1.0, 0.0, 1.0], &hs, &[]), LpValue::Unbounded);
        assert_eq!(maximize(&[0.0, 0.0, 0.0], &hs, &[]), LpValue::Optimal(0.0));
    }
}
