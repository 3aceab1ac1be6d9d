//! Optimal control problem data, validation and the interlacing stage split.
//!
//! Decision variables are regrouped as `ξ_0 = x_0` and `ξ_k = [u_{k-1}; x_k]`
//! for `k = 1..=N`, so each bilinear dynamics row only couples two adjacent
//! stage blocks:
//!
//! ```text
//! D_k ξ_k + E_k ξ_{k+1} + (S ξ_{k+1} ⊗ I)ᵀ G_k ξ_k = d_k
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{block_diag, is_positive_definite, vstack};
use crate::scalar::{lit, to_f64, Real};

/// `x⁺ = A x + B u + Σ_i C_i x [u]_i + B_w w`
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearDynamics<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    /// One `n_x × n_x` matrix per input channel.
    pub c: Vec<DMatrix<T>>,
    pub bw: DMatrix<T>,
}

impl<T: Real> BilinearDynamics<T> {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    pub fn nw(&self) -> usize {
        self.bw.ncols()
    }

    /// `[C_1; …; C_{n_u}]`, shape `(n_x·n_u) × n_x`.
    pub fn c_stack(&self) -> DMatrix<T> {
        let nx = self.nx();
        let mut out = DMatrix::zeros(nx * self.c.len(), nx);
        for (i, ci) in self.c.iter().enumerate() {
            out.view_mut((i * nx, 0), (nx, nx)).copy_from(ci);
        }
        out
    }

    pub fn dimension_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let nx = self.a.nrows();
        if nx == 0 {
            issues.push("A must have at least one row".to_string());
        }
        if !self.a.is_square() {
            issues.push(format!("A is {}x{}, expected square", self.a.nrows(), self.a.ncols()));
        }
        if self.b.nrows() != nx {
            issues.push(format!("B has {} rows, expected {nx}", self.b.nrows()));
        }
        if self.b.ncols() == 0 {
            issues.push("B must have at least one column".to_string());
        }
        if self.c.len() != self.b.ncols() {
            issues.push(format!("{} C matrices given, expected {}", self.c.len(), self.b.ncols()));
        }
        for (i, ci) in self.c.iter().enumerate() {
            if ci.shape() != (nx, nx) {
                issues.push(format!("C_{} is {}x{}, expected {nx}x{nx}", i + 1, ci.nrows(), ci.ncols()));
            }
        }
        if self.bw.nrows() != nx {
            issues.push(format!("Bw has {} rows, expected {nx}", self.bw.nrows()));
        }
        issues
    }

    pub fn step(&self, x: &DVector<T>, u: &DVector<T>, w: &DVector<T>) -> Result<DVector<T>> {
        check_dim("step_dynamics state", self.nx(), x.len())?;
        check_dim("step_dynamics input", self.nu(), u.len())?;
        check_dim("step_dynamics disturbance", self.nw(), w.len())?;
        let mut next = &self.a * x + &self.b * u + &self.bw * w;
        for (ci, &ui) in self.c.iter().zip(u.iter()) {
            next += ci * x * ui;
        }
        Ok(next)
    }
}

/// `{v : P v ≤ p}`
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron<T: Real> {
    pub lhs: DMatrix<T>,
    pub rhs: DVector<T>,
}

impl<T: Real> Polyhedron<T> {
    pub fn new(lhs: DMatrix<T>, rhs: DVector<T>) -> Result<Self> {
        check_dim("polyhedron rows", lhs.nrows(), rhs.len())?;
        Ok(Self { lhs, rhs })
    }

    /// The whole of `R^dim`, represented with zero rows.
    pub fn whole_space(dim: usize) -> Self {
        Self {
            lhs: DMatrix::zeros(0, dim),
            rhs: DVector::zeros(0),
        }
    }

    /// Per-coordinate bounds; infinite bounds produce no row.
    pub fn from_bounds(lower: &[f64], upper: &[f64]) -> Self {
        assert_eq!(lower.len(), upper.len());
        let dim = lower.len();
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        for j in 0..dim {
            if upper[j].is_finite() {
                rows.push((j, 1.0, upper[j]));
            }
            if lower[j].is_finite() {
                rows.push((j, -1.0, -lower[j]));
            }
        }
        let mut lhs = DMatrix::zeros(rows.len(), dim);
        let mut rhs = DVector::zeros(rows.len());
        for (i, &(j, s, b)) in rows.iter().enumerate() {
            lhs[(i, j)] = lit(s);
            rhs[i] = lit(b);
        }
        Self { lhs, rhs }
    }

    pub fn dim(&self) -> usize {
        self.lhs.ncols()
    }

    pub fn rows(&self) -> usize {
        self.lhs.nrows()
    }

    /// Largest violation `max_i (P v − p)_i`, or `-inf` for zero rows.
    pub fn max_violation(&self, v: &DVector<T>) -> T {
        let r = &self.lhs * v - &self.rhs;
        r.iter().fold(lit(f64::NEG_INFINITY), |m: T, &x| m.max(x))
    }

    pub fn contains(&self, v: &DVector<T>, tol: T) -> bool {
        self.rows() == 0 || self.max_violation(v) <= tol
    }

    /// `{[a; b] : a ∈ self, b ∈ other}`
    pub fn product(&self, other: &Self) -> Self {
        Self {
            lhs: block_diag(&self.lhs, &other.lhs),
            rhs: vstack(&self.rhs, &other.rhs),
        }
    }
}

/// Quadratic, time-invariant stage cost with a separate terminal weight.
///
/// `ℓ(x, u) = ½xᵀQx + qᵀx + ½uᵀRu + rᵀu + constant`, `ℓ_N(x) = ½xᵀQ_N x + q_Nᵀx + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCost<T: Real> {
    pub state_weight: DMatrix<T>,
    pub state_linear: DVector<T>,
    pub input_weight: DMatrix<T>,
    pub input_linear: DVector<T>,
    pub terminal_weight: DMatrix<T>,
    pub terminal_linear: DVector<T>,
    /// Added once per stage; only affects reported objective values.
    pub constant: T,
}

impl<T: Real> StageCost<T> {
    pub fn stage(&self, x: &DVector<T>, u: &DVector<T>) -> T {
        let half = lit::<T>(0.5);
        half * x.dot(&(&self.state_weight * x))
            + self.state_linear.dot(x)
            + half * u.dot(&(&self.input_weight * u))
            + self.input_linear.dot(u)
            + self.constant
    }

    pub fn terminal(&self, x: &DVector<T>) -> T {
        lit::<T>(0.5) * x.dot(&(&self.terminal_weight * x))
            + self.terminal_linear.dot(x)
            + self.constant
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearMpcProblem<T: Real> {
    pub dynamics: BilinearDynamics<T>,
    pub state_set: Polyhedron<T>,
    pub input_set: Polyhedron<T>,
    pub cost: StageCost<T>,
    pub horizon: usize,
    /// `n_w × N` disturbance forecast, column `k` used at stage `k`.
    pub disturbance: DMatrix<T>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    Dimension(String),
    NotPositiveDefinite(&'static str),
    Horizon,
    NonFinite(&'static str),
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValidationIssue::Dimension(m) => write!(f, "dimension mismatch: {m}"),
            ValidationIssue::NotPositiveDefinite(name) => write!(f, "{name} not positive definite"),
            ValidationIssue::Horizon => write!(f, "horizon must be at least 1"),
            ValidationIssue::NonFinite(name) => write!(f, "{name} contains non-finite entries"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.ok() {
            Ok(())
        } else {
            let msg: Vec<String> = self.issues.iter().map(|i| i.to_string()).collect();
            Err(Error::InvalidProblem(msg.join("; ")))
        }
    }
}

const PD_PIVOT: f64 = 1e-10;

impl<T: Real> BilinearMpcProblem<T> {
    pub fn nx(&self) -> usize {
        self.dynamics.nx()
    }

    pub fn nu(&self) -> usize {
        self.dynamics.nu()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut issues: Vec<ValidationIssue> = self
            .dynamics
            .dimension_issues()
            .into_iter()
            .map(ValidationIssue::Dimension)
            .collect();
        let nx = self.dynamics.a.nrows();
        let nu = self.dynamics.b.ncols();
        let nw = self.dynamics.bw.ncols();
        let mut dim = |what: &str, found: (usize, usize), expected: (usize, usize)| {
            if found != expected {
                issues.push(ValidationIssue::Dimension(format!(
                    "{what} is {}x{}, expected {}x{}",
                    found.0, found.1, expected.0, expected.1
                )));
            }
        };
        let c = &self.cost;
        dim("Q", c.state_weight.shape(), (nx, nx));
        dim("q", c.state_linear.shape(), (nx, 1));
        dim("R", c.input_weight.shape(), (nu, nu));
        dim("r", c.input_linear.shape(), (nu, 1));
        dim("QN", c.terminal_weight.shape(), (nx, nx));
        dim("qN", c.terminal_linear.shape(), (nx, 1));
        dim("Px", self.state_set.lhs.shape(), (self.state_set.rows(), nx));
        dim("px", self.state_set.rhs.shape(), (self.state_set.lhs.nrows(), 1));
        dim("Pu", self.input_set.lhs.shape(), (self.input_set.rows(), nu));
        dim("pu", self.input_set.rhs.shape(), (self.input_set.lhs.nrows(), 1));
        dim("w", self.disturbance.shape(), (nw, self.horizon));
        if self.horizon == 0 {
            issues.push(ValidationIssue::Horizon);
        }
        let finite = |m: &DMatrix<T>| m.iter().all(|x| x.is_finite());
        for (name, m) in [
            ("A", &self.dynamics.a),
            ("B", &self.dynamics.b),
            ("Bw", &self.dynamics.bw),
            ("w", &self.disturbance),
            ("Q", &c.state_weight),
            ("R", &c.input_weight),
            ("QN", &c.terminal_weight),
        ] {
            if !finite(m) {
                issues.push(ValidationIssue::NonFinite(name));
            }
        }
        let pivot = lit::<T>(PD_PIVOT);
        if c.state_weight.shape() == (nx, nx) && !is_positive_definite(&c.state_weight, pivot) {
            issues.push(ValidationIssue::NotPositiveDefinite("Q"));
        }
        if c.input_weight.shape() == (nu, nu) && !is_positive_definite(&c.input_weight, pivot) {
            issues.push(ValidationIssue::NotPositiveDefinite("R"));
        }
        if c.terminal_weight.shape() == (nx, nx) && !is_positive_definite(&c.terminal_weight, pivot) {
            issues.push(ValidationIssue::NotPositiveDefinite("QN"));
        }
        ValidationReport { issues }
    }

    /// `Ξ_k = U × X` for every `k ≥ 1`.
    pub fn stage_set(&self) -> Polyhedron<T> {
        self.input_set.product(&self.state_set)
    }

    /// Objective of the original problem along `(x_0..x_N, u_0..u_{N-1})`.
    pub fn objective(&self, xs: &[DVector<T>], us: &[DVector<T>]) -> T {
        let n = self.horizon;
        let mut total = T::zero();
        for k in 0..n {
            total += self.cost.stage(&xs[k], &us[k]);
        }
        total + self.cost.terminal(&xs[n])
    }

    /// Forward simulation over the horizon with the stored forecast.
    pub fn rollout(&self, x0: &DVector<T>, us: &[DVector<T>]) -> Result<Vec<DVector<T>>> {
        check_dim("rollout inputs", self.horizon, us.len())?;
        let mut xs = Vec::with_capacity(self.horizon + 1);
        xs.push(x0.clone());
        for (k, u) in us.iter().enumerate() {
            let w = self.disturbance.column(k).into_owned();
            let next = self.dynamics.step(&xs[k], u, &w)?;
            xs.push(next);
        }
        Ok(xs)
    }

    /// Same problem with a different forecast (`n_w × N`).
    pub fn with_disturbance(&self, w: DMatrix<T>) -> Result<Self> {
        check_dim("forecast rows", self.dynamics.nw(), w.nrows())?;
        check_dim("forecast columns", self.horizon, w.ncols())?;
        Ok(Self {
            disturbance: w,
            ..self.clone()
        })
    }
}

/// Stage vectors `ξ_0..ξ_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub xi: Vec<DVector<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn horizon(&self) -> usize {
        self.xi.len().saturating_sub(1)
    }

    pub fn zeros(nx: usize, nu: usize, horizon: usize) -> Self {
        let mut xi = vec![DVector::zeros(nx)];
        xi.extend((0..horizon).map(|_| DVector::zeros(nu + nx)));
        Self { xi }
    }

    /// Builds `ξ` from states `x_0..x_N` and inputs `u_0..u_{N-1}`.
    pub fn pack(xs: &[DVector<T>], us: &[DVector<T>]) -> Result<Self> {
        check_dim("pack states", us.len() + 1, xs.len())?;
        let mut xi = Vec::with_capacity(xs.len());
        xi.push(xs[0].clone());
        for (u, x) in us.iter().zip(&xs[1..]) {
            xi.push(vstack(u, x));
        }
        Ok(Self { xi })
    }

    pub fn unpack(&self, nu: usize) -> (Vec<DVector<T>>, Vec<DVector<T>>) {
        let nx = self.xi[0].len();
        let mut xs = vec![self.xi[0].clone()];
        let mut us = Vec::with_capacity(self.horizon());
        for v in &self.xi[1..] {
            us.push(v.rows(0, nu).into_owned());
            xs.push(v.rows(nu, nx).into_owned());
        }
        (xs, us)
    }

    /// Input block of stage `k ≥ 1`, i.e. `u_{k-1}`.
    pub fn input(&self, k: usize, nu: usize) -> DVector<T> {
        self.xi[k].rows(0, nu).into_owned()
    }

    pub fn state(&self, k: usize, nu: usize) -> DVector<T> {
        if k == 0 {
            self.xi[0].clone()
        } else {
            let n = self.xi[k].len();
            self.xi[k].rows(nu, n - nu).into_owned()
        }
    }

    pub fn total_dim(&self) -> usize {
        self.xi.iter().map(|v| v.len()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.xi
            .iter()
            .zip(&other.xi)
            .fold(T::zero(), |m, (a, b)| m.max((a - b).amax()))
    }

    pub fn flatten(&self) -> DVector<T> {
        DVector::from_iterator(self.total_dim(), self.xi.iter().flat_map(|v| v.iter().copied()))
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        self.xi.iter().map(|v| v.iter().map(|&x| to_f64(x)).collect()).collect()
    }
}

/// Coefficients of the interlacing split plus the shared stage data.
#[derive(Debug, Clone)]
pub struct SplitProblem<T: Real> {
    pub nx: usize,
    pub nu: usize,
    pub horizon: usize,
    /// `D_0..D_{N-1}`
    pub d: Vec<DMatrix<T>>,
    /// `E_0..E_{N-1}`
    pub e: Vec<DMatrix<T>>,
    /// `S = [I, 0]`, selects `u_k` out of `ξ_{k+1}`.
    pub selector: DMatrix<T>,
    /// `G_0..G_{N-1}`
    pub g: Vec<DMatrix<T>>,
    /// `d_k = −B_w w_k`
    pub offset: Vec<DVector<T>>,
    /// Fixes `ξ_0`.
    pub x_init: DVector<T>,
    /// `Ξ_k` for `k ≥ 1` (time invariant).
    pub stage_set: Polyhedron<T>,
    /// `U`, the leading rows of `Ξ_k`.
    pub input_set: Polyhedron<T>,
    /// Cost Hessians `Q_0, diag(R, Q), …, diag(R, Q_N)` without the proximal term.
    pub cost_hessian: Vec<DMatrix<T>>,
    /// Linear cost terms `q_0, [r; q], …, [r; q_N]`.
    pub cost_linear: Vec<DVector<T>>,
    pub rho: T,
}

impl<T: Real> SplitProblem<T> {
    pub fn build(p: &BilinearMpcProblem<T>, x_init: &DVector<T>, rho: T) -> Result<Self> {
        p.validate().into_result()?;
        check_dim("initial state", p.nx(), x_init.len())?;
        if rho < T::zero() {
            return Err(Error::InvalidConfig("rho must be nonnegative".into()));
        }
        let nx = p.nx();
        let nu = p.nu();
        let n = p.horizon;
        let nxi = nx + nu;
        let dyn_ = &p.dynamics;

        let mut shifted_a = DMatrix::zeros(nx, nxi);
        shifted_a.view_mut((0, nu), (nx, nx)).copy_from(&dyn_.a);
        let mut e_mat = DMatrix::zeros(nx, nxi);
        e_mat.view_mut((0, 0), (nx, nu)).copy_from(&dyn_.b);
        e_mat.view_mut((0, nu), (nx, nx)).copy_from(&(-DMatrix::<T>::identity(nx, nx)));
        let mut selector = DMatrix::zeros(nu, nxi);
        selector.view_mut((0, 0), (nu, nu)).fill_with_identity();
        let mut g_shift = DMatrix::zeros(nx * nu, nxi);
        for (i, ci) in dyn_.c.iter().enumerate() {
            g_shift.view_mut((i * nx, nu), (nx, nx)).copy_from(ci);
        }

        let mut d = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n);
        for k in 0..n {
            if k == 0 {
                d.push(dyn_.a.clone());
                g.push(dyn_.c_stack());
            } else {
                d.push(shifted_a.clone());
                g.push(g_shift.clone());
            }
            offset.push(-(&dyn_.bw * p.disturbance.column(k)));
        }

        let c = &p.cost;
        let mut cost_hessian = vec![c.state_weight.clone()];
        let mut cost_linear = vec![c.state_linear.clone()];
        for k in 1..=n {
            let (qw, ql) = if k == n {
                (&c.terminal_weight, &c.terminal_linear)
            } else {
                (&c.state_weight, &c.state_linear)
            };
            cost_hessian.push(block_diag(&c.input_weight, qw));
            cost_linear.push(vstack(&c.input_linear, ql));
        }

        Ok(Self {
            nx,
            nu,
            horizon: n,
            d,
            e: vec![e_mat; n],
            selector,
            g,
            offset,
            x_init: x_init.clone(),
            stage_set: p.stage_set(),
            input_set: p.input_set.clone(),
            cost_hessian,
            cost_linear,
            rho,
        })
    }

    pub fn nxi(&self) -> usize {
        self.nx + self.nu
    }

    pub fn stage_dim(&self, k: usize) -> usize {
        if k == 0 {
            self.nx
        } else {
            self.nxi()
        }
    }

    /// Stacked decision dimension `n_x + N (n_u + n_x)`.
    pub fn total_dim(&self) -> usize {
        self.nx + self.horizon * self.nxi()
    }

    /// `𝒬_k = diag(R, Q_k) + ρ I`
    pub fn local_hessian(&self, k: usize) -> DMatrix<T> {
        let h = &self.cost_hessian[k];
        h + DMatrix::identity(h.nrows(), h.ncols()) * self.rho
    }

    /// `F_k(ξ_k)`
    pub fn stage_objective(&self, k: usize, xi: &DVector<T>) -> T {
        lit::<T>(0.5) * xi.dot(&(&self.cost_hessian[k] * xi)) + self.cost_linear[k].dot(xi)
    }

    pub fn objective(&self, t: &Trajectory<T>) -> T {
        t.xi
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (k, v)| acc + self.stage_objective(k, v))
    }

    /// `(S ξ_{k+1} ⊗ I)ᵀ G_k ξ_k`
    pub fn bilinear_term(&self, k: usize, xi_k: &DVector<T>, xi_next: &DVector<T>) -> DVector<T> {
        let gx = &self.g[k] * xi_k;
        let u = &self.selector * xi_next;
        let mut out = DVector::zeros(self.nx);
        for (i, &ui) in u.iter().enumerate() {
            out += gx.rows(i * self.nx, self.nx) * ui;
        }
        out
    }

    /// `mat(G_k ξ_k)`, the `n_x × n_u` matrix whose columns are `C_i x_k`.
    pub fn mat_g(&self, k: usize, xi_k: &DVector<T>) -> DMatrix<T> {
        let gx = &self.g[k] * xi_k;
        DMatrix::from_column_slice(self.nx, self.nu, gx.as_slice())
    }

    /// `D̃_k = D_k + (S ξ_{k+1} ⊗ I)ᵀ G_k`, Jacobian of coupling `k` w.r.t. `ξ_k`.
    pub fn jac_current(&self, k: usize, xi_next: &DVector<T>) -> DMatrix<T> {
        let u = &self.selector * xi_next;
        let mut out = self.d[k].clone();
        for (i, &ui) in u.iter().enumerate() {
            out += self.g[k].rows(i * self.nx, self.nx) * ui;
        }
        out
    }

    /// `Ẽ_k = E_k + mat(G_k ξ_k) S`, Jacobian of coupling `k` w.r.t. `ξ_{k+1}`.
    pub fn jac_next(&self, k: usize, xi_k: &DVector<T>) -> DMatrix<T> {
        &self.e[k] + self.mat_g(k, xi_k) * &self.selector
    }

    /// `c_k = D_k ξ_k + E_k ξ_{k+1} + (S ξ_{k+1} ⊗ I)ᵀ G_k ξ_k − d_k`
    pub fn coupling(&self, k: usize, xi_k: &DVector<T>, xi_next: &DVector<T>) -> DVector<T> {
        &self.d[k] * xi_k + &self.e[k] * xi_next + self.bilinear_term(k, xi_k, xi_next)
            - &self.offset[k]
    }

    pub fn coupling_residual(&self, t: &Trajectory<T>) -> Result<Vec<DVector<T>>> {
        self.check_trajectory(t)?;
        Ok((0..self.horizon)
            .map(|k| self.coupling(k, &t.xi[k], &t.xi[k + 1]))
            .collect())
    }

    pub fn check_trajectory(&self, t: &Trajectory<T>) -> Result<()> {
        check_dim("trajectory stages", self.horizon + 1, t.xi.len())?;
        for (k, v) in t.xi.iter().enumerate() {
            check_dim("trajectory stage block", self.stage_dim(k), v.len())?;
        }
        Ok(())
    }

    /// `x_{k+1}` predicted from `ξ_k` and the input `u_k`.
    pub fn predict(&self, k: usize, xi_k: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let mut next = DVector::zeros(self.nxi());
        next.rows_mut(0, self.nu).copy_from(u);
        self.coupling(k, xi_k, &next)
    }

    /// Trajectory obtained by simulating `u_0..u_{N−1}` from `x_init`.
    pub fn simulate(&self, us: &[DVector<T>]) -> Result<Trajectory<T>> {
        check_dim("simulated inputs", self.horizon, us.len())?;
        let mut xi = vec![self.x_init.clone()];
        for (k, u) in us.iter().enumerate() {
            check_dim("input", self.nu, u.len())?;
            let x = self.predict(k, &xi[k], u);
            xi.push(vstack(u, &x));
        }
        Ok(Trajectory { xi })
    }

    /// Replaces the forecast-dependent offsets `d_k`.
    pub fn set_disturbance(&mut self, bw: &DMatrix<T>, w: &DMatrix<T>) -> Result<()> {
        check_dim("forecast columns", self.horizon, w.ncols())?;
        for k in 0..self.horizon {
            self.offset[k] = -(bw * w.column(k));
        }
        Ok(())
    }

    /// Replaces the state part of the linear cost terms, `q` on stages
    /// `0..N−1` and `q_N` on the terminal stage. The stage Hessians are untouched,
    /// so maps built for this problem remain valid.
    pub fn set_state_linear(&mut self, q: &DVector<T>, q_terminal: &DVector<T>) -> Result<()> {
        check_dim("state linear cost", self.nx, q.len())?;
        check_dim("terminal linear cost", self.nx, q_terminal.len())?;
        let (nu, nx, n) = (self.nu, self.nx, self.horizon);
        self.cost_linear[0] = q.clone();
        for k in 1..=n {
            let src = if k == n { q_terminal } else { q };
            self.cost_linear[k].rows_mut(nu, nx).copy_from(src);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// JSON problem file

/// On-disk problem description. Matrices are row-major arrays of arrays.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[allow(non_snake_case)]
pub struct ProblemFile {
    pub A: Vec<Vec<f64>>,
    pub B: Vec<Vec<f64>>,
    pub C: Vec<Vec<Vec<f64>>>,
    pub Bw: Vec<Vec<f64>>,
    pub Q: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub R: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    pub QN: Vec<Vec<f64>>,
    pub qN: Vec<f64>,
    pub Px: Vec<Vec<f64>>,
    pub px: Vec<f64>,
    pub Pu: Vec<Vec<f64>>,
    pub pu: Vec<f64>,
    pub N: usize,
    pub w: Vec<Vec<f64>>,
}

fn mat_from_rows<T: Real>(rows: &[Vec<f64>], ncols_if_empty: usize, name: &'static str) -> Result<DMatrix<T>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(ncols_if_empty, |r| r.len());
    for r in rows {
        if r.len() != ncols {
            return Err(Error::InvalidProblem(format!("matrix {name} has ragged rows")));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| lit(rows[i][j])))
}

fn rows_from_mat<T: Real>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| to_f64(m[(i, j)])).collect())
        .collect()
}

fn vec_from<T: Real>(v: &[f64]) -> DVector<T> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| lit(x)))
}

fn vec_to<T: Real>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|&x| to_f64(x)).collect()
}

impl ProblemFile {
    pub fn into_problem<T: Real>(&self) -> Result<BilinearMpcProblem<T>> {
        let nx = self.A.len();
        let nu = self.B.first().map_or(0, |r| r.len());
        let c = self
            .C
            .iter()
            .map(|m| mat_from_rows(m, nx, "C"))
            .collect::<Result<Vec<_>>>()?;
        let p = BilinearMpcProblem {
            dynamics: BilinearDynamics {
                a: mat_from_rows(&self.A, nx, "A")?,
                b: mat_from_rows(&self.B, nu, "B")?,
                c,
                bw: mat_from_rows(&self.Bw, 0, "Bw")?,
            },
            state_set: Polyhedron::new(mat_from_rows(&self.Px, nx, "Px")?, vec_from(&self.px))?,
            input_set: Polyhedron::new(mat_from_rows(&self.Pu, nu, "Pu")?, vec_from(&self.pu))?,
            cost: StageCost {
                state_weight: mat_from_rows(&self.Q, nx, "Q")?,
                state_linear: vec_from(&self.q),
                input_weight: mat_from_rows(&self.R, nu, "R")?,
                input_linear: vec_from(&self.r),
                terminal_weight: mat_from_rows(&self.QN, nx, "QN")?,
                terminal_linear: vec_from(&self.qN),
                constant: T::zero(),
            },
            horizon: self.N,
            disturbance: mat_from_rows(&self.w, self.N, "w")?,
        };
        Ok(p)
    }

    pub fn from_problem<T: Real>(p: &BilinearMpcProblem<T>) -> Self {
        Self {
            A: rows_from_mat(&p.dynamics.a),
            B: rows_from_mat(&p.dynamics.b),
            C: p.dynamics.c.iter().map(rows_from_mat).collect(),
            Bw: rows_from_mat(&p.dynamics.bw),
            Q: rows_from_mat(&p.cost.state_weight),
            q: vec_to(&p.cost.state_linear),
            R: rows_from_mat(&p.cost.input_weight),
            r: vec_to(&p.cost.input_linear),
            QN: rows_from_mat(&p.cost.terminal_weight),
            qN: vec_to(&p.cost.terminal_linear),
            Px: rows_from_mat(&p.state_set.lhs),
            px: vec_to(&p.state_set.rhs),
            Pu: rows_from_mat(&p.input_set.lhs),
            pu: vec_to(&p.input_set.rhs),
            N: p.horizon,
            w: rows_from_mat(&p.disturbance),
        }
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
