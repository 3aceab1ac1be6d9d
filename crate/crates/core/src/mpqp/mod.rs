//! Explicit solution maps for the stage QP
//!
//! ```text
//! min ½ yᵀ𝒬 y + θᵀy   s.t.  P y ≤ p
//! ```
//!
//! parameterised by the linear term `θ`. Critical regions are enumerated
//! offline over active sets; online evaluation locates `θ` with a binary
//! search tree and applies the region's affine law.

mod enumerate;
mod io;
mod tree;
mod validate;

use nalgebra::{DMatrix, DVector};

pub use enumerate::{enumerate_regions, EnumerationOptions};
pub use io::{MapFile, NodeRecord, PolyRecord, RegionRecord, TreeRecord};
pub use tree::{SearchTree, TreeNode};
pub use validate::{default_sample_box, validate_map, MapReport, SampleBox};
pub use io::MAP_FORMAT_VERSION;

use crate::error::{Error, Result};
use crate::problem::Polyhedron;
use crate::qp::{solve_qp, QpProblem, QpSolution};
use crate::scalar::{lit, Real};

/// Region membership tolerance on `H θ − h`.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct StageMpqp<T: Real> {
    pub hessian: DMatrix<T>,
    pub set: Polyhedron<T>,
    /// Parameter dependence of the constraint right-hand side (`p + Cθ`).
    /// Only `None` is supported by the enumerator.
    pub rhs_param: Option<DMatrix<T>>,
}

impl<T: Real> StageMpqp<T> {
    pub fn new(hessian: DMatrix<T>, set: Polyhedron<T>) -> Self {
        Self {
            hessian,
            set,
            rhs_param: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    /// Online fallback: solves the QP for one parameter directly.
    pub fn solve_active_set(&self, theta: &DVector<T>) -> Result<QpSolution<T>> {
        solve_qp(&QpProblem {
            hessian: &self.hessian,
            linear: theta,
            eq: None,
            ineq: (&self.set.lhs, &self.set.rhs),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalRegion<T: Real> {
    /// Sorted constraint row indices.
    pub active_set: Vec<usize>,
    /// `y*(θ) = F θ + f`
    pub gain: DMatrix<T>,
    pub offset: DVector<T>,
    /// `{θ : H θ ≤ h}` with unit-norm rows.
    pub region: Polyhedron<T>,
    /// Active multipliers `λ_A(θ) = Λ θ + λ0`.
    pub dual_gain: DMatrix<T>,
    pub dual_offset: DVector<T>,
}

impl<T: Real> CriticalRegion<T> {
    pub fn contains(&self, theta: &DVector<T>, tol: T) -> bool {
        self.region.contains(theta, tol)
    }

    pub fn primal(&self, theta: &DVector<T>) -> DVector<T> {
        &self.gain * theta + &self.offset
    }

    pub fn dual(&self, theta: &DVector<T>) -> DVector<T> {
        &self.dual_gain * theta + &self.dual_offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PwaEval<T: Real> {
    pub y: DVector<T>,
    pub active_set: Vec<usize>,
    pub dual: DVector<T>,
    pub region: usize,
    /// Hyperplane comparisons made while descending the tree.
    pub planes_visited: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PwaSolutionMap<T: Real> {
    pub qp: StageMpqp<T>,
    pub regions: Vec<CriticalRegion<T>>,
    pub tree: SearchTree<T>,
    /// Feasible parameter set; zero rows means all of `R^n`.
    pub domain: Polyhedron<T>,
    /// Active sets rejected for violating LICQ.
    pub skipped_degenerate: Vec<Vec<usize>>,
}

impl<T: Real> PwaSolutionMap<T> {
    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn eval(&self, theta: &DVector<T>) -> Result<PwaEval<T>> {
        let tol = lit::<T>(MEMBERSHIP_TOL);
        if !self.domain.contains(theta, tol) {
            return Err(Error::OutsideDomain);
        }
        let (candidates, planes_visited) = self.tree.candidates(theta);
        let region = candidates
            .iter()
            .copied()
            .find(|&r| self.regions[r].contains(theta, tol))
            .ok_or(Error::OutsideDomain)?;
        Ok(self.apply(region, theta, planes_visited))
    }

    /// Point location by scanning every region; reference for the tree.
    pub fn locate_linear(&self, theta: &DVector<T>) -> Option<usize> {
        let tol = lit::<T>(MEMBERSHIP_TOL);
        self.regions.iter().position(|r| r.contains(theta, tol))
    }

    fn apply(&self, region: usize, theta: &DVector<T>, planes_visited: usize) -> PwaEval<T> {
        let r = &self.regions[region];
        PwaEval {
            y: r.primal(theta),
            active_set: r.active_set.clone(),
            dual: r.dual(theta),
            region,
            planes_visited,
        }
    }

    /// Drops a region and rebuilds the tree over the remaining ones.
    pub fn remove_region(&mut self, index: usize) {
        self.regions.remove(index);
        self.tree = SearchTree::build(&self.regions, tree::DEFAULT_MAX_DEPTH);
    }
}
