//! Augmented-Lagrangian solver for bilinear model predictive control.
//!
//! The horizon is split into stage blocks `ξ_0 = x_0`, `ξ_k = [u_{k-1}; x_k]`.
//! Each iteration solves the decoupled stage QPs through precomputed explicit
//! maps, then takes a Newton-type step on a banded coupled QP.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiation.

pub mod error;
pub mod kkt;
pub mod linalg;
pub mod lp;
pub mod mpqp;
pub mod oracle;
pub mod problem;
pub mod qp;
pub mod scalar;
pub mod sensitivity;
pub mod sim;
pub mod solver;
pub mod stage;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Problem = problem::BilinearMpcProblem<f64>;
pub type Problem32 = problem::BilinearMpcProblem<f32>;
pub type Dynamics = problem::BilinearDynamics<f64>;
pub type Split = problem::SplitProblem<f64>;
pub type Split32 = problem::SplitProblem<f32>;
pub type Traj = problem::Trajectory<f64>;
pub type Traj32 = problem::Trajectory<f32>;
pub type Map = mpqp::PwaSolutionMap<f64>;
pub type Map32 = mpqp::PwaSolutionMap<f32>;
pub type Kkt = kkt::KktSystem<f64>;
pub type Config = solver::SolverConfig;
pub type State = solver::SolverState<f64>;
pub type Outcome = solver::SolveResult<f64>;
pub type Controller = solver::Controller<f64>;
