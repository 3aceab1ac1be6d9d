//! Gradients, coupling residuals, the banded Lagrangian Hessian and active
//! Jacobians at the stage solutions.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::problem::{SplitProblem, Trajectory};
use crate::scalar::{lit, Real};

/// `g_k = ∇F_k(y_k)` for `k = 0..N`.
pub fn gradients<T: Real>(s: &SplitProblem<T>, y: &Trajectory<T>) -> Result<Vec<DVector<T>>> {
    s.check_trajectory(y)?;
    Ok(y.xi
        .iter()
        .enumerate()
        .map(|(k, v)| &s.cost_hessian[k] * v + &s.cost_linear[k])
        .collect())
}

pub fn residuals<T: Real>(s: &SplitProblem<T>, y: &Trajectory<T>) -> Result<Vec<DVector<T>>> {
    s.check_trajectory(y)?;
    Ok((0..s.horizon)
        .map(|k| s.coupling(k, &y.xi[k], &y.xi[k + 1]))
        .collect())
}

/// Symmetric block-tridiagonal Hessian of `𝓛⁰` in the stage blocks `ξ_0..ξ_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedHessian<T: Real> {
    /// Diagonal blocks `Q_0, diag(R, Q), …, diag(R, Q_N)` plus `σI`.
    pub diag: Vec<DMatrix<T>>,
    /// `S_{k,k+1}` (rows `ξ_k`, columns `ξ_{k+1}`), `k = 0..N−1`.
    pub upper: Vec<DMatrix<T>>,
    pub sigma: T,
}

impl<T: Real> BandedHessian<T> {
    /// Exact Hessian `∇²_{ξξ}𝓛⁰`; it does not depend on `y`. Column `i` of
    /// `S_{k,k+1}` (the `u_{k,i}` coordinate of `ξ_{k+1}`) is `G_k^{(i)ᵀ} λ_k`,
    /// so for `k ≥ 1` the input rows are zero and the state rows hold `C_iᵀ λ_k`.
    pub fn exact(s: &SplitProblem<T>, lambda: &[DVector<T>]) -> Result<Self> {
        check_dim("multipliers", s.horizon, lambda.len())?;
        let (nx, nu) = (s.nx, s.nu);
        let upper = (0..s.horizon)
            .map(|k| {
                let mut blk = DMatrix::zeros(s.stage_dim(k), s.nxi());
                for i in 0..nu {
                    let col = s.g[k].rows(i * nx, nx).tr_mul(&lambda[k]);
                    blk.column_mut(i).copy_from(&col);
                }
                blk
            })
            .collect();
        Ok(Self {
            diag: s.cost_hessian.clone(),
            upper,
            sigma: T::zero(),
        })
    }

    pub fn with_sigma(mut self, sigma: T) -> Self {
        let delta = sigma - self.sigma;
        for d in &mut self.diag {
            for i in 0..d.nrows() {
                d[(i, i)] += delta;
            }
        }
        self.sigma = sigma;
        self
    }

    pub fn dims(&self) -> Vec<usize> {
        self.diag.iter().map(|d| d.nrows()).collect()
    }

    pub fn dense(&self) -> DMatrix<T> {
        let dims = self.dims();
        let n: usize = dims.iter().sum();
        let mut out = DMatrix::zeros(n, n);
        let mut off = 0;
        for (k, d) in self.diag.iter().enumerate() {
            out.view_mut((off, off), d.shape()).copy_from(d);
            if k < self.upper.len() {
                let u = &self.upper[k];
                let next = off + dims[k];
                out.view_mut((off, next), u.shape()).copy_from(u);
                out.view_mut((next, off), (u.ncols(), u.nrows())).copy_from(&u.transpose());
            }
            off += dims[k];
        }
        out
    }

    /// `‖·‖∞` of the dense matrix, computed blockwise.
    pub fn inf_norm(&self) -> T {
        let mut best = T::zero();
        for k in 0..self.diag.len() {
            let d = &self.diag[k];
            for i in 0..d.nrows() {
                let mut row = d.row(i).iter().fold(T::zero(), |a, x| a + x.abs());
                if k < self.upper.len() {
                    row += self.upper[k].row(i).iter().fold(T::zero(), |a, x| a + x.abs());
                }
                if k > 0 {
                    row += self.upper[k - 1].column(i).iter().fold(T::zero(), |a, x| a + x.abs());
                }
                best = best.max(row);
            }
        }
        best
    }

    /// Frobenius distance to the exact Hessian, `σ √dim`.
    pub fn deviation_from_exact(&self) -> T {
        let n: usize = self.dims().iter().sum();
        self.sigma.abs() * lit::<T>(n as f64).sqrt()
    }
}

/// `∇_ξ 𝓛⁰(y, λ)` stacked by stage.
pub fn lagrangian_gradient<T: Real>(
    s: &SplitProblem<T>,
    y: &Trajectory<T>,
    lambda: &[DVector<T>],
) -> Result<Vec<DVector<T>>> {
    check_dim("multipliers", s.horizon, lambda.len())?;
    let mut g = gradients(s, y)?;
    for k in 0..s.horizon {
        g[k] += s.jac_current(k, &y.xi[k + 1]).tr_mul(&lambda[k]);
        g[k + 1] += s.jac_next(k, &y.xi[k]).tr_mul(&lambda[k]);
    }
    Ok(g)
}

/// Rows of `P_ξ` whose slack `p − P y_k` is at most `tol`.
pub fn detect_active<T: Real>(s: &SplitProblem<T>, y: &Trajectory<T>, tol: T) -> Vec<Vec<usize>> {
    let p = &s.stage_set;
    (1..=s.horizon)
        .map(|k| {
            let slack = &p.rhs - &p.lhs * &y.xi[k];
            (0..p.rows()).filter(|&i| slack[i] <= tol).collect()
        })
        .collect()
}

/// `P̂_ξ^k` for `k = 1..N` (index `k − 1`), rows copied from `P_ξ`.
pub fn active_jacobians<T: Real>(s: &SplitProblem<T>, active: &[Vec<usize>]) -> Vec<DMatrix<T>> {
    let p = &s.stage_set.lhs;
    active
        .iter()
        .map(|rows| DMatrix::from_fn(rows.len(), p.ncols(), |i, j| p[(rows[i], j)]))
        .collect()
}

/// Everything the coupled step needs, evaluated at the stage solutions `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityPack<T: Real> {
    pub g: Vec<DVector<T>>,
    pub c: Vec<DVector<T>>,
    pub hessian: BandedHessian<T>,
    /// `P̂_ξ^k`, index `k − 1`.
    pub active_jac: Vec<DMatrix<T>>,
    pub active: Vec<Vec<usize>>,
}

/// Derivative data at `y`. `active` is taken from the stage solver when available; otherwise
/// activity is detected geometrically with `tol_act`.
pub fn evaluate<T: Real>(
    s: &SplitProblem<T>,
    y: &Trajectory<T>,
    lambda: &[DVector<T>],
    active: Option<&[Vec<usize>]>,
    tol_act: T,
) -> Result<SensitivityPack<T>> {
    let active = match active {
        Some(a) => {
            check_dim("active sets", s.horizon, a.len())?;
            a.to_vec()
        }
        None => detect_active(s, y, tol_act),
    };
    Ok(SensitivityPack {
        g: gradients(s, y)?,
        c: residuals(s, y)?,
        hessian: BandedHessian::exact(s, lambda)?,
        active_jac: active_jacobians(s, &active),
        active,
    })
}
