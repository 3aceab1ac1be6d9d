//! Reference computations used to cross-check the solver: finite differences,
//! dense KKT solves, an affine Riccati recursion, a brute-force input grid and
//! a KKT residual for the split problem. Everything here is plain `f64`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::kkt::KktSystem;
use crate::linalg::spd_inverse;
use crate::problem::{BilinearMpcProblem, SplitProblem, Trajectory};
use crate::qp::{solve_qp, QpProblem};
use crate::sensitivity::{gradients, lagrangian_gradient, BandedHessian};

pub const GRADIENT_TOL: f64 = 1e-5;
pub const HESSIAN_TOL: f64 = 1e-4;

/// Outcome of one oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    /// `max |analytic − reference| / max(1, ‖reference‖∞)`
    pub max_rel_deviation: f64,
    /// `(row, column)` of the worst entry; column is 0 for vectors.
    pub worst: (usize, usize),
    pub threshold: f64,
    pub passed: bool,
    /// Largest FD entry outside the block band, when a band is checked.
    pub band_leak: f64,
}

impl OracleReport {
    fn from_diff(analytic: &DMatrix<f64>, reference: &DMatrix<f64>, threshold: f64) -> Self {
        let scale = reference.amax().max(1.0);
        let mut worst = (0, 0);
        let mut dev = 0.0;
        for j in 0..analytic.ncols() {
            for i in 0..analytic.nrows() {
                let d = (analytic[(i, j)] - reference[(i, j)]).abs() / scale;
                if d > dev || d.is_nan() {
                    dev = d;
                    worst = (i, j);
                }
            }
        }
        Self {
            max_rel_deviation: dev,
            worst,
            threshold,
            passed: dev <= threshold,
            band_leak: 0.0,
        }
    }
}

/// `h = 1e−6 (1 + ‖y‖∞)`
pub fn default_step(y: &DVector<f64>) -> f64 {
    1e-6 * (1.0 + y.amax())
}

/// Central-difference gradient of `f` at `y`.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, y: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut p = y.clone();
    DVector::from_fn(y.len(), |i, _| {
        p[i] = y[i] + h;
        let up = f(&p);
        p[i] = y[i] - h;
        let down = f(&p);
        p[i] = y[i];
        (up - down) / (2.0 * h)
    })
}

/// Central-difference Jacobian of a vector map; row `i` is output `i`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, y: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = f(y).len();
    let mut out = DMatrix::zeros(m, y.len());
    let mut p = y.clone();
    for j in 0..y.len() {
        p[j] = y[j] + h;
        let up = f(&p);
        p[j] = y[j] - h;
        let down = f(&p);
        p[j] = y[j];
        out.column_mut(j).copy_from(&((up - down) / (2.0 * h)));
    }
    out
}

pub fn fd_check_gradient(
    f: impl Fn(&DVector<f64>) -> f64,
    grad: &DVector<f64>,
    y: &DVector<f64>,
    h: f64,
) -> OracleReport {
    let fd = fd_gradient(f, y, h);
    let a = DMatrix::from_column_slice(grad.len(), 1, grad.as_slice());
    let r = DMatrix::from_column_slice(fd.len(), 1, fd.as_slice());
    OracleReport::from_diff(&a, &r, GRADIENT_TOL)
}

pub fn fd_check_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    jac: &DMatrix<f64>,
    y: &DVector<f64>,
    h: f64,
    threshold: f64,
) -> OracleReport {
    OracleReport::from_diff(jac, &fd_jacobian(f, y, h), threshold)
}

fn unflatten(s: &SplitProblem<f64>, v: &DVector<f64>) -> Trajectory<f64> {
    let mut xi = Vec::with_capacity(s.horizon + 1);
    let mut off = 0;
    for k in 0..=s.horizon {
        let n = s.stage_dim(k);
        xi.push(v.rows(off, n).into_owned());
        off += n;
    }
    Trajectory { xi }
}

fn flatten_blocks(v: &[DVector<f64>]) -> DVector<f64> {
    let n = v.iter().map(|b| b.len()).sum();
    DVector::from_iterator(n, v.iter().flat_map(|b| b.iter().copied()))
}

/// `𝓛⁰(ξ, λ) = Σ F_k(ξ_k) + Σ λ_kᵀ c_k(ξ_k, ξ_{k+1})`
pub fn lagrangian_value(s: &SplitProblem<f64>, y: &Trajectory<f64>, lambda: &[DVector<f64>]) -> f64 {
    let mut v = s.objective(y);
    for k in 0..s.horizon {
        v += lambda[k].dot(&s.coupling(k, &y.xi[k], &y.xi[k + 1]));
    }
    v
}

/// FD check of every stage gradient `∇F_k`, stacked.
pub fn check_stage_gradients(s: &SplitProblem<f64>, y: &Trajectory<f64>) -> Result<OracleReport> {
    let g = flatten_blocks(&gradients(s, y)?);
    let v = y.flatten();
    Ok(fd_check_gradient(|p| s.objective(&unflatten(s, p)), &g, &v, default_step(&v)))
}

/// FD check of `∇_ξ𝓛⁰` against the Lagrangian value.
pub fn check_lagrangian_gradient(
    s: &SplitProblem<f64>,
    y: &Trajectory<f64>,
    lambda: &[DVector<f64>],
) -> Result<OracleReport> {
    let g = flatten_blocks(&lagrangian_gradient(s, y, lambda)?);
    let v = y.flatten();
    Ok(fd_check_gradient(
        |p| lagrangian_value(s, &unflatten(s, p), lambda),
        &g,
        &v,
        default_step(&v),
    ))
}

/// FD of `∇_ξ𝓛⁰` compared with the exact banded Hessian. `band_leak` is the
/// largest FD entry in blocks more than one stage apart.
pub fn check_lagrangian_hessian(
    s: &SplitProblem<f64>,
    y: &Trajectory<f64>,
    lambda: &[DVector<f64>],
) -> Result<OracleReport> {
    let h = BandedHessian::exact(s, lambda)?.dense();
    let v = y.flatten();
    let fd = fd_jacobian(
        |p| flatten_blocks(&lagrangian_gradient(s, &unflatten(s, p), lambda).expect("shapes checked")),
        &v,
        default_step(&v),
    );
    let mut report = OracleReport::from_diff(&h, &fd, HESSIAN_TOL);
    let dims: Vec<usize> = (0..=s.horizon).map(|k| s.stage_dim(k)).collect();
    let stage_of = |i: usize| {
        let mut acc = 0;
        dims.iter()
            .position(|&d| {
                acc += d;
                i < acc
            })
            .unwrap_or(dims.len())
    };
    for j in 0..fd.ncols() {
        for i in 0..fd.nrows() {
            if stage_of(i).abs_diff(stage_of(j)) > 1 {
                report.band_leak = report.band_leak.max(fd[(i, j)].abs());
            }
        }
    }
    if report.band_leak > HESSIAN_TOL * fd.amax().max(1.0) {
        report.passed = false;
    }
    Ok(report)
}

fn solve_dense_checked(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = m.clone().full_piv_lu();
    let u = lu.u();
    let diag = u.diagonal();
    let big = diag.amax();
    let small = diag.iter().fold(f64::INFINITY, |a, x| a.min(x.abs()));
    if !(big > 0.0) || small <= 1e-14 * big * m.nrows() as f64 {
        return Err(Error::Singular { stage: 0 });
    }
    let x = lu.solve(rhs).ok_or(Error::Singular { stage: 0 })?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Singular { stage: 0 })
    }
}

/// Full-pivot LU solve of the folded system, in the ordering of
/// [`KktSystem::dense`].
pub fn dense_kkt_solve(k: &KktSystem<f64>) -> Result<DVector<f64>> {
    let (m, rhs) = k.dense();
    solve_dense_checked(&m, &rhs)
}

/// Solution of the coupled QP with explicit slacks.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackQpSolution {
    pub dy: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub slack: Vec<DVector<f64>>,
}

/// Solves the coupled QP before slack elimination,
///
/// ```text
/// min Σ ½Δy_kᵀH_kΔy_k + Δy_kᵀS_{k,k+1}Δy_{k+1} + g_kᵀΔy_k + μ/2 ‖s_k‖²
/// s.t. c_k + D̃_kΔy_k + Ẽ_kΔy_{k+1} = 0,  P̂_kΔy_k = s_k,  Δy_0 = 0,
/// ```
///
/// as one dense LU-factored KKT matrix. Requires `μ > 0`.
pub fn dense_slack_solve(k: &KktSystem<f64>) -> Result<SlackQpSolution> {
    if !(k.mu > 0.0) {
        return Err(Error::InvalidConfig("slack penalty must be positive".into()));
    }
    let n = k.horizon;
    let (nx, nxi) = (k.nx, k.nxi());
    let m: Vec<usize> = k.active_jac.iter().map(|p| p.nrows()).collect();
    let ms: usize = m.iter().sum();
    // variables: Δy_1..Δy_N, s_1..s_N; constraints: N couplings, then slack rows
    let ny = n * nxi;
    let nv = ny + ms;
    let nc = n * nx + ms;
    let dim = nv + nc;
    let mut a = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    let dy = |k: usize| (k - 1) * nxi;
    let mut s_off = vec![0; n + 1];
    for j in 1..=n {
        s_off[j] = if j == 1 { ny } else { s_off[j - 1] + m[j - 2] };
    }
    for j in 1..=n {
        a.view_mut((dy(j), dy(j)), (nxi, nxi)).copy_from(&k.hess_diag[j]);
        if j < n {
            a.view_mut((dy(j), dy(j + 1)), (nxi, nxi)).copy_from(&k.cross[j]);
            a.view_mut((dy(j + 1), dy(j)), (nxi, nxi)).copy_from(&k.cross[j].transpose());
        }
        rhs.rows_mut(dy(j), nxi).copy_from(&(-&k.g[j]));
        for i in 0..m[j - 1] {
            a[(s_off[j] + i, s_off[j] + i)] = k.mu;
        }
    }
    let put = |a: &mut DMatrix<f64>, r: usize, c: usize, blk: &DMatrix<f64>| {
        a.view_mut((r, c), blk.shape()).copy_from(blk);
        a.view_mut((c, r), (blk.ncols(), blk.nrows())).copy_from(&blk.transpose());
    };
    for j in 0..n {
        let row = nv + j * nx;
        if j > 0 {
            put(&mut a, row, dy(j), &k.d_tilde[j]);
        }
        put(&mut a, row, dy(j + 1), &k.e_tilde[j]);
        rhs.rows_mut(row, nx).copy_from(&(-&k.c[j]));
    }
    let mut row = nv + n * nx;
    for j in 1..=n {
        let p = &k.active_jac[j - 1];
        if p.nrows() == 0 {
            continue;
        }
        put(&mut a, row, dy(j), p);
        put(&mut a, row, s_off[j], &(-DMatrix::identity(p.nrows(), p.nrows())));
        row += p.nrows();
    }
    let w = solve_dense_checked(&a, &rhs)?;
    let mut dyv = vec![DVector::zeros(nx)];
    dyv.extend((1..=n).map(|j| w.rows(dy(j), nxi).into_owned()));
    let lambda = (0..n).map(|j| w.rows(nv + j * nx, nx).into_owned()).collect();
    let slack = (1..=n).map(|j| w.rows(s_off[j], m[j - 1]).into_owned()).collect();
    Ok(SlackQpSolution {
        dy: dyv,
        lambda,
        slack,
    })
}

fn require_linear(s: &SplitProblem<f64>) -> Result<()> {
    if s.g.iter().any(|g| g.amax() != 0.0) {
        return Err(Error::InvalidProblem("reference requires C_i = 0".into()));
    }
    Ok(())
}

/// Affine LQR by the backward Riccati recursion and a forward rollout from
/// `x_init`, ignoring all inequality constraints. Needs `C_i = 0`.
pub fn riccati_lqr(s: &SplitProblem<f64>) -> Result<Trajectory<f64>> {
    require_linear(s)?;
    let (nx, nu, n) = (s.nx, s.nu, s.horizon);
    let a = s.d[0].clone();
    let b = s.e[0].columns(0, nu).into_owned();
    let state_q = |k: usize| -> (DMatrix<f64>, DVector<f64>) {
        if k == 0 {
            (s.cost_hessian[0].clone(), s.cost_linear[0].clone())
        } else {
            (
                s.cost_hessian[k].view((nu, nu), (nx, nx)).into_owned(),
                s.cost_linear[k].rows(nu, nx).into_owned(),
            )
        }
    };
    // u_k is costed in stage k + 1
    let input_r = |k: usize| -> (DMatrix<f64>, DVector<f64>) {
        (
            s.cost_hessian[k + 1].view((0, 0), (nu, nu)).into_owned(),
            s.cost_linear[k + 1].rows(0, nu).into_owned(),
        )
    };
    let (mut p, mut pv) = state_q(n);
    let mut gains = vec![(DMatrix::zeros(nu, nx), DVector::zeros(nu)); n];
    for k in (0..n).rev() {
        let e = -&s.offset[k];
        let (q, qv) = state_q(k);
        let (r, rv) = input_r(k);
        let huu = &r + b.tr_mul(&p) * &b;
        let hux = b.tr_mul(&p) * &a;
        let pe = &p * &e + &pv;
        let hu = &rv + b.tr_mul(&pe);
        let inv = spd_inverse(&huu).ok_or(Error::NotPositiveDefinite("R + BᵀPB"))?;
        let kf = -(&inv * &hux);
        let kff = -(&inv * &hu);
        pv = &qv + a.tr_mul(&pe) + hux.tr_mul(&kff);
        p = &q + a.tr_mul(&p) * &a + hux.tr_mul(&kf);
        p = (&p + p.transpose()) * 0.5;
        gains[k] = (kf, kff);
    }
    let mut us = Vec::with_capacity(n);
    let mut x = s.x_init.clone();
    for k in 0..n {
        let u = &gains[k].0 * &x + &gains[k].1;
        x = &a * &x + &b * &u - &s.offset[k];
        us.push(u);
    }
    s.simulate(&us)
}

/// Solution of the full linear-MPC QP (`C_i = 0`) as one dense problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseQpSolution {
    pub trajectory: Trajectory<f64>,
    pub objective: f64,
    /// Dynamics multipliers `λ_0..λ_{N−1}` in the coupling sign convention.
    pub lambda: Vec<DVector<f64>>,
}

/// Stacks `ξ_1..ξ_N`, imposes the coupling rows as equalities and every
/// stage set, and solves with the dense active-set QP solver.
pub fn dense_linear_mpc(s: &SplitProblem<f64>) -> Result<DenseQpSolution> {
    require_linear(s)?;
    let (nx, n, nxi) = (s.nx, s.horizon, s.nxi());
    let dim = n * nxi;
    let mut h = DMatrix::zeros(dim, dim);
    let mut lin = DVector::zeros(dim);
    for k in 1..=n {
        let o = (k - 1) * nxi;
        h.view_mut((o, o), (nxi, nxi)).copy_from(&s.cost_hessian[k]);
        lin.rows_mut(o, nxi).copy_from(&s.cost_linear[k]);
    }
    let mut aeq = DMatrix::zeros(n * nx, dim);
    let mut beq = DVector::zeros(n * nx);
    for k in 0..n {
        let r = k * nx;
        if k == 0 {
            beq.rows_mut(0, nx).copy_from(&(&s.offset[0] - &s.d[0] * &s.x_init));
        } else {
            aeq.view_mut((r, (k - 1) * nxi), (nx, nxi)).copy_from(&s.d[k]);
            beq.rows_mut(r, nx).copy_from(&s.offset[k]);
        }
        aeq.view_mut((r, k * nxi), (nx, nxi)).copy_from(&s.e[k]);
    }
    let set = &s.stage_set;
    let m = set.rows();
    let mut pin = DMatrix::zeros(n * m, dim);
    let mut prh = DVector::zeros(n * m);
    for k in 0..n {
        pin.view_mut((k * m, k * nxi), (m, nxi)).copy_from(&set.lhs);
        prh.rows_mut(k * m, m).copy_from(&set.rhs);
    }
    let sol = solve_qp(&QpProblem {
        hessian: &h,
        linear: &lin,
        eq: Some((&aeq, &beq)),
        ineq: (&pin, &prh),
    })?;
    let mut xi = vec![s.x_init.clone()];
    xi.extend((0..n).map(|k| sol.y.rows(k * nxi, nxi).into_owned()));
    let trajectory = Trajectory { xi };
    let lambda = (0..n).map(|k| sol.eq_dual.rows(k * nx, nx).into_owned()).collect();
    Ok(DenseQpSolution {
        objective: s.objective(&trajectory),
        trajectory,
        lambda,
    })
}

/// Brute-force optimum over the input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub inputs: Vec<f64>,
    pub cost: f64,
    /// Feasible grid points in the coarse pass.
    pub feasible_points: usize,
}

const GRID_STATE_TOL: f64 = 1e-9;

fn input_interval(p: &BilinearMpcProblem<f64>) -> Result<(f64, f64)> {
    let set = &p.input_set;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..set.rows() {
        let a = set.lhs[(i, 0)];
        let b = set.rhs[i];
        if a > 0.0 {
            hi = hi.min(b / a);
        } else if a < 0.0 {
            lo = lo.max(b / a);
        } else if b < 0.0 {
            return Err(Error::NoFeasiblePoint);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidProblem("grid oracle needs a bounded input set".into()));
    }
    if lo > hi {
        return Err(Error::NoFeasiblePoint);
    }
    Ok((lo, hi))
}

fn rollout_cost(p: &BilinearMpcProblem<f64>, x0: &DVector<f64>, us: &[f64]) -> Option<f64> {
    let mut xs = vec![x0.clone()];
    let mut uv = Vec::with_capacity(us.len());
    for (k, &u) in us.iter().enumerate() {
        let u = DVector::from_element(1, u);
        let w = p.disturbance.column(k).into_owned();
        let next = p.dynamics.step(&xs[k], &u, &w).ok()?;
        if !p.state_set.contains(&next, GRID_STATE_TOL) {
            return None;
        }
        xs.push(next);
        uv.push(u);
    }
    Some(p.objective(&xs, &uv))
}

fn grid_search(
    p: &BilinearMpcProblem<f64>,
    x0: &DVector<f64>,
    axes: &[Vec<f64>],
) -> (Option<(Vec<f64>, f64)>, usize) {
    let sizes: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    let total: usize = sizes.iter().product();
    let point = |mut idx: usize| -> Vec<f64> {
        let mut u = Vec::with_capacity(axes.len());
        for (ax, &sz) in axes.iter().zip(&sizes) {
            u.push(ax[idx % sz]);
            idx /= sz;
        }
        u
    };
    let results: Vec<(usize, f64)> = (0..total)
        .into_par_iter()
        .filter_map(|i| rollout_cost(p, x0, &point(i)).map(|c| (i, c)))
        .collect();
    let count = results.len();
    // ties resolved by the lowest flat index so the result is deterministic
    let best = results
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, c)| (point(i), c));
    (best, count)
}

/// Exhaustive search over a uniform input grid with `grid_res` points per
/// stage, then one pass over a 10× finer grid spanning one coarse cell around
/// the incumbent. Needs `N ≤ 3` and a single bounded input.
pub fn grid_oracle(p: &BilinearMpcProblem<f64>, x0: &DVector<f64>, grid_res: usize) -> Result<GridOptimum> {
    check_dim("initial state", p.nx(), x0.len())?;
    if p.nu() != 1 || p.horizon > 3 {
        return Err(Error::InvalidProblem("grid oracle needs n_u = 1 and N ≤ 3".into()));
    }
    if grid_res < 2 {
        return Err(Error::InvalidConfig("grid resolution must be at least 2".into()));
    }
    let (lo, hi) = input_interval(p)?;
    let h = (hi - lo) / (grid_res - 1) as f64;
    let coarse: Vec<f64> = (0..grid_res).map(|i| lo + h * i as f64).collect();
    let (best, feasible_points) = grid_search(p, x0, &vec![coarse; p.horizon]);
    let (u, cost) = best.ok_or(Error::NoFeasiblePoint)?;
    let fine: Vec<Vec<f64>> = u
        .iter()
        .map(|&c| {
            (-10..=10)
                .map(|j| c + h * j as f64 / 10.0)
                .filter(|v| *v >= lo && *v <= hi)
                .collect()
        })
        .collect();
    let (refined, _) = grid_search(p, x0, &fine);
    let (inputs, cost) = match refined {
        Some((ur, cr)) if cr < cost => (ur, cr),
        _ => (u, cost),
    };
    Ok(GridOptimum {
        inputs,
        cost,
        feasible_points,
    })
}

/// Residuals of the first-order conditions of the split problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// `max_k ‖∇_{ξ_k}𝓛⁰ + P_ξᵀν_k‖∞` over `k = 1..N`.
    pub stationarity: f64,
    /// Coupling residual, stage-set violation and `ξ_0` mismatch.
    pub primal: f64,
    /// `max |ν_i (p − P y_k)_i|` and dual sign violations.
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

/// `stage_duals` are full-length multipliers of `P_ξ y_k ≤ p_ξ`, index `k − 1`.
pub fn kkt_residual(
    s: &SplitProblem<f64>,
    y: &Trajectory<f64>,
    lambda: &[DVector<f64>],
    stage_duals: &[DVector<f64>],
) -> Result<KktResidual> {
    check_dim("stage duals", s.horizon, stage_duals.len())?;
    let grad = lagrangian_gradient(s, y, lambda)?;
    let set = &s.stage_set;
    let mut stat: f64 = 0.0;
    let mut primal: f64 = (&y.xi[0] - &s.x_init).amax();
    let mut comp: f64 = 0.0;
    for k in 1..=s.horizon {
        let nu = &stage_duals[k - 1];
        check_dim("stage dual", set.rows(), nu.len())?;
        stat = stat.max((&grad[k] + set.lhs.tr_mul(nu)).amax());
        let slack = &set.rhs - &set.lhs * &y.xi[k];
        for i in 0..set.rows() {
            primal = primal.max(-slack[i]);
            comp = comp.max((nu[i] * slack[i]).abs()).max(-nu[i]);
        }
    }
    for c in s.coupling_residual(y)? {
        primal = primal.max(c.amax());
    }
    Ok(KktResidual {
        stationarity: stat,
        primal,
        complementarity: comp,
    })
}
