//! Coupled equality-constrained QP of the Newton step and its banded KKT solve.
//!
//! Unknowns are ordered `λ_0, Δy_1, λ_1, Δy_2, …, λ_{N−1}, Δy_N`; `Δy_0 = 0` is
//! eliminated. The system is
//!
//! ```text
//! [ H + σI + μ P̂ᵀP̂   Jᵀ ] [Δy]   [−g]
//! [ J                 0  ] [λ ] = [−c]
//! ```
//!
//! with `J` built from `D̃_k`, `Ẽ_k` linearized at the stage solutions.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SymFactor;
use crate::problem::{SplitProblem, Trajectory};
use crate::scalar::{lit, to_f64, Real};
use crate::sensitivity::SensitivityPack;

/// Relative eigenvalue floor for the equilibrated pivot blocks.
pub const PIVOT_REL_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct KktSystem<T: Real> {
    pub nx: usize,
    pub nu: usize,
    pub horizon: usize,
    /// `diag(R, Q_k) + σI`, `k = 0..N` (entry 0 is unused).
    pub hess_diag: Vec<DMatrix<T>>,
    /// `S_{k,k+1}`, `k = 0..N−1`.
    pub cross: Vec<DMatrix<T>>,
    /// `P̂_ξ^k` for `k = 1..N`, index `k − 1`.
    pub active_jac: Vec<DMatrix<T>>,
    pub d_tilde: Vec<DMatrix<T>>,
    pub e_tilde: Vec<DMatrix<T>>,
    pub g: Vec<DVector<T>>,
    pub c: Vec<DVector<T>>,
    pub mu: T,
    pub sigma: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution<T: Real> {
    /// `Δy_0..Δy_N` with `Δy_0 = 0`.
    pub dy: Vec<DVector<T>>,
    /// `λ^QP_0..λ^QP_{N−1}`
    pub lambda: Vec<DVector<T>>,
    /// Inertia of the factored (slack-bordered) system.
    pub positive: usize,
    pub negative: usize,
}

impl<T: Real> KktSolution<T> {
    pub fn dy_trajectory(&self) -> Trajectory<T> {
        Trajectory { xi: self.dy.clone() }
    }

    /// Solution in the dense ordering of [`KktSystem::dense`].
    pub fn to_vector(&self) -> DVector<T> {
        let mut parts: Vec<&DVector<T>> = Vec::new();
        for k in 0..self.lambda.len() {
            parts.push(&self.lambda[k]);
            parts.push(&self.dy[k + 1]);
        }
        let n = parts.iter().map(|p| p.len()).sum();
        DVector::from_iterator(n, parts.into_iter().flat_map(|p| p.iter().copied()))
    }
}

impl<T: Real> KktSystem<T> {
    /// Assembly at the stage solutions `y` (also the linearization point).
    pub fn assemble(
        pack: &SensitivityPack<T>,
        s: &SplitProblem<T>,
        y: &Trajectory<T>,
        mu: T,
        sigma: T,
    ) -> Result<Self> {
        s.check_trajectory(y)?;
        let n = s.horizon;
        let hess = pack.hessian.clone().with_sigma(sigma);
        Ok(Self {
            nx: s.nx,
            nu: s.nu,
            horizon: n,
            hess_diag: hess.diag,
            cross: hess.upper,
            active_jac: pack.active_jac.clone(),
            d_tilde: (0..n).map(|k| s.jac_current(k, &y.xi[k + 1])).collect(),
            e_tilde: (0..n).map(|k| s.jac_next(k, &y.xi[k])).collect(),
            g: pack.g.clone(),
            c: pack.c.clone(),
            mu,
            sigma,
        })
    }

    pub fn nxi(&self) -> usize {
        self.nx + self.nu
    }

    /// `𝒬̃_k = diag(R, Q_k) + σI + μ P̂ᵀP̂`
    pub fn q_tilde(&self, k: usize) -> DMatrix<T> {
        let p = &self.active_jac[k - 1];
        &self.hess_diag[k] + p.tr_mul(p) * self.mu
    }

    pub fn dim(&self) -> usize {
        self.horizon * (self.nx + self.nxi())
    }

    fn offsets(&self) -> (Vec<usize>, Vec<usize>) {
        // lam_off[k], dy_off[k] for k ≥ 1
        let (nx, nxi) = (self.nx, self.nxi());
        let lam = (0..self.horizon).map(|k| k * (nx + nxi)).collect();
        let mut dy = vec![usize::MAX];
        dy.extend((1..=self.horizon).map(|k| (k - 1) * (nx + nxi) + nx));
        (lam, dy)
    }

    /// Full symmetric matrix and right-hand side.
    pub fn dense(&self) -> (DMatrix<T>, DVector<T>) {
        let n = self.dim();
        let nxi = self.nxi();
        let (lam, dy) = self.offsets();
        let mut k_mat = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        let mut put = |r: usize, c: usize, m: &DMatrix<T>, sym: bool| {
            k_mat.view_mut((r, c), m.shape()).copy_from(m);
            if sym {
                k_mat.view_mut((c, r), (m.ncols(), m.nrows())).copy_from(&m.transpose());
            }
        };
        for k in 1..=self.horizon {
            put(dy[k], dy[k], &self.q_tilde(k), false);
            if k < self.horizon {
                put(dy[k], dy[k + 1], &self.cross[k], true);
            }
        }
        for k in 0..self.horizon {
            if k > 0 {
                put(lam[k], dy[k], &self.d_tilde[k], true);
            }
            put(lam[k], dy[k + 1], &self.e_tilde[k], true);
        }
        for k in 0..self.horizon {
            rhs.rows_mut(lam[k], self.nx).copy_from(&(-&self.c[k]));
            rhs.rows_mut(dy[k + 1], nxi).copy_from(&(-&self.g[k + 1]));
        }
        (k_mat, rhs)
    }

    /// `K w − rhs` evaluated blockwise.
    pub fn residual(&self, sol: &KktSolution<T>) -> DVector<T> {
        let (k_mat, rhs) = self.dense();
        &k_mat * sol.to_vector() - rhs
    }

    fn bordered(&self) -> bool {
        self.mu > T::zero()
    }

    fn slack_rows(&self, k: usize) -> usize {
        if self.bordered() {
            self.active_jac[k - 1].nrows()
        } else {
            0
        }
    }

    /// Pivot block, right-hand side and link to the next group for the sweep.
    ///
    /// Group 0 is `λ_0`, group `k ∈ 1..N−1` is `(Δy_k, ν_k, λ_k)` and group `N`
    /// is `(Δy_N, ν_N)`, where `ν_k = μ P̂_k Δy_k` are the slack multipliers. Keeping
    /// `ν_k` as unknowns (`P̂Δy − ν/μ = 0`) factors the same system as the folded
    /// `μP̂ᵀP̂` form without the `O(μ)` conditioning.
    fn groups(&self) -> (Vec<DMatrix<T>>, Vec<DVector<T>>, Vec<DMatrix<T>>) {
        let (nx, nxi, n) = (self.nx, self.nxi(), self.horizon);
        let mut m = Vec::with_capacity(n + 1);
        let mut r = Vec::with_capacity(n + 1);
        let mut link = Vec::with_capacity(n);
        m.push(DMatrix::zeros(nx, nx));
        r.push(-&self.c[0]);
        let inv_mu = if self.bordered() { T::one() / self.mu } else { T::zero() };
        for k in 1..=n {
            let ms = self.slack_rows(k);
            let nl = if k < n { nx } else { 0 };
            let dim = nxi + ms + nl;
            let mut blk = DMatrix::zeros(dim, dim);
            blk.view_mut((0, 0), (nxi, nxi)).copy_from(&self.hess_diag[k]);
            if ms > 0 {
                let p = &self.active_jac[k - 1];
                blk.view_mut((nxi, 0), (ms, nxi)).copy_from(p);
                blk.view_mut((0, nxi), (nxi, ms)).copy_from(&p.transpose());
                for i in 0..ms {
                    blk[(nxi + i, nxi + i)] = -inv_mu;
                }
            }
            if nl > 0 {
                let d = &self.d_tilde[k];
                blk.view_mut((nxi + ms, 0), (nx, nxi)).copy_from(d);
                blk.view_mut((0, nxi + ms), (nxi, nx)).copy_from(&d.transpose());
            }
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, nxi).copy_from(&(-&self.g[k]));
            if nl > 0 {
                rhs.rows_mut(nxi + ms, nx).copy_from(&(-&self.c[k]));
            }
            m.push(blk);
            r.push(rhs);

            // rows of group k, columns of group k − 1
            let prev_dim = m[k - 1].nrows();
            let mut l = DMatrix::zeros(dim, prev_dim);
            let et = self.e_tilde[k - 1].transpose();
            if k == 1 {
                l.view_mut((0, 0), (nxi, nx)).copy_from(&et);
            } else {
                let prev_ms = self.slack_rows(k - 1);
                l.view_mut((0, 0), (nxi, nxi)).copy_from(&self.cross[k - 1].transpose());
                l.view_mut((0, nxi + prev_ms), (nxi, nx)).copy_from(&et);
            }
            link.push(l);
        }
        (m, r, link)
    }

    /// Expected inertia `(positive, negative)` of the bordered system when the
    /// reduced Hessian is positive definite.
    pub fn expected_inertia(&self) -> (usize, usize) {
        let slacks: usize = (1..=self.horizon).map(|k| self.slack_rows(k)).sum();
        (self.horizon * self.nxi(), self.horizon * self.nx + slacks)
    }

    /// Backward Schur-complement sweep from stage `N` to stage 0, then forward
    /// substitution from `Δy_0 = 0`.
    pub fn schur_solve(&self) -> Result<KktSolution<T>> {
        let n = self.horizon;
        let (m, r, link) = self.groups();
        let tol = lit::<T>(PIVOT_REL_TOL);
        let mut factors: Vec<Option<SymFactor<T>>> = vec![None; n + 1];
        let mut rr: Vec<DVector<T>> = vec![DVector::zeros(0); n + 1];
        let mut w = m[n].clone();
        rr[n] = r[n].clone();
        for k in (0..n).rev() {
            let f = SymFactor::new(&w, tol).ok_or(Error::Singular { stage: k + 1 })?;
            let l = &link[k];
            let finv_l = f.solve_mat(l);
            let finv_r = f.solve_vec(&rr[k + 1]);
            w = &m[k] - l.tr_mul(&finv_l);
            rr[k] = &r[k] - l.tr_mul(&finv_r);
            factors[k + 1] = Some(f);
        }
        factors[0] = Some(SymFactor::new(&w, tol).ok_or(Error::Singular { stage: 0 })?);

        let mut positive = 0;
        let mut negative = 0;
        for f in factors.iter().flatten() {
            positive += f.positive;
            negative += f.negative;
        }
        if (positive, negative) != self.expected_inertia() {
            return Err(Error::NegativeCurvature { stage: n });
        }

        let mut ys: Vec<DVector<T>> = Vec::with_capacity(n + 1);
        ys.push(factors[0].as_ref().map(|f| f.solve_vec(&rr[0])).unwrap_or_default());
        for k in 0..n {
            let rhs = &rr[k + 1] - &link[k] * &ys[k];
            ys.push(factors[k + 1].as_ref().map(|f| f.solve_vec(&rhs)).unwrap_or_default());
        }

        let nxi = self.nxi();
        let mut dy = vec![DVector::zeros(self.nx)];
        let mut lambda = vec![ys[0].clone()];
        for (k, yk) in ys.iter().enumerate().skip(1) {
            dy.push(yk.rows(0, nxi).into_owned());
            if k < n {
                let ms = self.slack_rows(k);
                lambda.push(yk.rows(nxi + ms, self.nx).into_owned());
            }
        }
        Ok(KktSolution {
            dy,
            lambda,
            positive,
            negative,
        })
    }

    /// Plain-text sparse triplets (`row col value`, 0-based) of the dense matrix,
    /// followed by the right-hand side as `rhs row value`.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let (k_mat, rhs) = self.dense();
        writeln!(out, "# dim {} mu {:e} sigma {:e}", k_mat.nrows(), to_f64(self.mu), to_f64(self.sigma))?;
        for j in 0..k_mat.ncols() {
            for i in 0..k_mat.nrows() {
                let v = k_mat[(i, j)];
                if v != T::zero() {
                    writeln!(out, "{i} {j} {:e}", to_f64(v))?;
                }
            }
        }
        for (i, v) in rhs.iter().enumerate() {
            writeln!(out, "rhs {i} {:e}", to_f64(*v))?;
        }
        Ok(())
    }
}
