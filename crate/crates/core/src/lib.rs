//! Preconditioned matrix-free Newton-Krylov solver for receding-horizon
//! minimum-time control.
//!
//! The prediction problem is posed on a scaled horizon whose physical
//! length `p` is itself an unknown. Its optimality conditions reduce, after
//! forward/backward sweeps over states and costates, to a square nonlinear
//! system `F(U, x_t, t) = 0` that is tracked along the closed loop with
//! warm-started Newton-Krylov refinements.

pub mod error;
pub mod harness;
pub mod krylov;
pub mod linalg;
pub mod models;
pub mod mpc;
pub mod ocp;
pub mod oracle;
pub mod precond;

pub use error::{Result, SolverError};
pub use krylov::{gmres, FdOperator, GmresReport, LinearOperator, Preconditioner};
pub use models::{Model1, Model1Params, Model2, Model2Params, ModelChoice};
pub use mpc::{MpcConfig, MpcError, StepStats, Trajectory};
pub use ocp::{evaluate_f, Dims, HorizonSolution, ModelDefinition, RecursionBuffers};
pub use precond::{PreconditionerFactors, SparsePreconditioner};
