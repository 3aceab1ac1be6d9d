//! Decoupled stage problems: parameter assembly and parallel map evaluation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::mpqp::{enumerate_regions, EnumerationOptions, PwaSolutionMap, StageMpqp};
use crate::problem::{SplitProblem, Trajectory};
use crate::scalar::Real;

/// `θ_1..θ_N`, stored at index `k − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams<T: Real> {
    pub theta: Vec<DVector<T>>,
}

/// `θ_k = [r; q_k] + Ẽ_{k−1}(z_{k−1})ᵀλ_{k−1} + D̃_k(z_{k+1})ᵀλ_k − ρ z_k`, with the
/// `λ_N` term absent for `k = N`. Only matrix-vector products are used.
pub fn assemble_theta<T: Real>(
    s: &SplitProblem<T>,
    z: &Trajectory<T>,
    lambda: &[DVector<T>],
) -> Result<StageParams<T>> {
    s.check_trajectory(z)?;
    check_dim("multipliers", s.horizon, lambda.len())?;
    for l in lambda {
        check_dim("multiplier block", s.nx, l.len())?;
    }
    let (nx, nu) = (s.nx, s.nu);
    let theta = (1..=s.horizon)
        .map(|k| {
            let mut th = &s.cost_linear[k] - &z.xi[k] * s.rho;
            // Ẽ_{k−1}ᵀλ = E ᵀλ + Sᵀ mat(G z_{k−1})ᵀ λ
            let prev = &lambda[k - 1];
            th += s.e[k - 1].tr_mul(prev);
            let gz = &s.g[k - 1] * &z.xi[k - 1];
            for i in 0..nu {
                th[i] += gz.rows(i * nx, nx).dot(prev);
            }
            if k < s.horizon {
                // D̃_kᵀλ = D_kᵀλ + Σ_i u_{k,i} G_k^{(i)ᵀ} λ
                let next = &lambda[k];
                th += s.d[k].tr_mul(next);
                let u = z.xi[k + 1].rows(0, nu);
                for i in 0..nu {
                    th += s.g[k].rows(i * nx, nx).tr_mul(next) * u[i];
                }
            }
            th
        })
        .collect();
    Ok(StageParams { theta })
}

/// Explicit maps for stages `1..N`. Stages with identical data share one map.
#[derive(Debug, Clone)]
pub struct StageMaps<T: Real> {
    pub maps: Vec<Arc<PwaSolutionMap<T>>>,
    /// `index[k − 1]` selects the map of stage `k`.
    pub index: Vec<usize>,
}

impl<T: Real> StageMaps<T> {
    pub fn shared(map: PwaSolutionMap<T>, horizon: usize) -> Self {
        Self {
            maps: vec![Arc::new(map)],
            index: vec![0; horizon],
        }
    }

    /// Enumerates one map per distinct stage Hessian `diag(R, Q_k) + ρI`.
    pub fn build(s: &SplitProblem<T>, opts: &EnumerationOptions) -> Result<Self> {
        let mut hessians: Vec<DMatrix<T>> = Vec::new();
        let mut index = Vec::with_capacity(s.horizon);
        for k in 1..=s.horizon {
            let h = s.local_hessian(k);
            let i = match hessians.iter().position(|x| *x == h) {
                Some(i) => i,
                None => {
                    hessians.push(h);
                    hessians.len() - 1
                }
            };
            index.push(i);
        }
        let maps = hessians
            .into_iter()
            .map(|h| {
                let qp = StageMpqp::new(h, s.stage_set.clone());
                enumerate_regions(&qp, opts).map(Arc::new).map_err(|e| match e {
                    Error::StageInfeasible { .. } => Error::StageInfeasible { stage: 1 },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { maps, index })
    }

    pub fn stage(&self, k: usize) -> &PwaSolutionMap<T> {
        &self.maps[self.index[k - 1]]
    }

    pub fn horizon(&self) -> usize {
        self.index.len()
    }
}

/// Worker pool for the per-stage loops. One worker runs everything inline.
#[derive(Debug, Clone)]
pub struct Workers {
    pool: Option<Arc<rayon::ThreadPool>>,
}

/// Environment variable read when the configured worker count is 0.
pub const WORKERS_ENV: &str = "BMPC_WORKERS";

impl Workers {
    pub fn sequential() -> Self {
        Self { pool: None }
    }

    /// `0` reads `BMPC_WORKERS`, falling back to the number of cores.
    pub fn new(count: usize) -> Result<Self> {
        let count = if count == 0 {
            std::env::var(WORKERS_ENV)
                .ok()
                .and_then(|v| v.trim().parse::<usize>().ok())
                .filter(|&n| n > 0)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        } else {
            count
        };
        if count == 1 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        Ok(Self {
            pool: Some(Arc::new(pool)),
        })
    }

    pub fn count(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// Ordered map over `0..n`; results do not depend on scheduling.
    pub fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSolutions<T: Real> {
    /// `y_0 = x_init`, `y_k` the stage minimizers.
    pub y: Trajectory<T>,
    /// Sorted active rows of `P_ξ` at `y_k`, index `k − 1`.
    pub active: Vec<Vec<usize>>,
    /// Full-length stage multipliers (zero on inactive rows), index `k − 1`.
    pub duals: Vec<DVector<T>>,
    /// Stages solved by the online QP instead of the map.
    pub fallbacks: usize,
}

fn scatter<T: Real>(m: usize, active: &[usize], values: &DVector<T>) -> DVector<T> {
    let mut out = DVector::zeros(m);
    for (&i, &v) in active.iter().zip(values.iter()) {
        out[i] = v;
    }
    out
}

/// Evaluates every stage map at its parameter, falling back to the
/// active-set QP if point location fails.
pub fn solve_stages<T: Real>(
    maps: &StageMaps<T>,
    params: &StageParams<T>,
    x_init: &DVector<T>,
    workers: &Workers,
) -> Result<StageSolutions<T>> {
    check_dim("stage parameters", maps.horizon(), params.theta.len())?;
    let fallbacks = AtomicUsize::new(0);
    let solved: Vec<Result<(DVector<T>, Vec<usize>, DVector<T>)>> = workers.map(params.theta.len(), |i| {
        let k = i + 1;
        let map = maps.stage(k);
        let theta = &params.theta[i];
        let m = map.qp.set.rows();
        match map.eval(theta) {
            Ok(e) => {
                let duals = scatter(m, &e.active_set, &e.dual);
                Ok((e.y, e.active_set, duals))
            }
            Err(_) => {
                fallbacks.fetch_add(1, Ordering::Relaxed);
                let sol = map.qp.solve_active_set(theta).map_err(|e| match e {
                    Error::Infeasible => Error::StageInfeasible { stage: k },
                    other => other,
                })?;
                let duals = scatter(m, &sol.active, &sol.dual);
                Ok((sol.y, sol.active, duals))
            }
        }
    });
    let mut xi = Vec::with_capacity(solved.len() + 1);
    xi.push(x_init.clone());
    let mut active = Vec::with_capacity(solved.len());
    let mut duals = Vec::with_capacity(solved.len());
    for r in solved {
        let (y, a, d) = r?;
        xi.push(y);
        active.push(a);
        duals.push(d);
    }
    Ok(StageSolutions {
        y: Trajectory { xi },
        active,
        duals,
        fallbacks: fallbacks.into_inner(),
    })
}
