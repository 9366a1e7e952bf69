//! Penalty fast-gradient QP solver with an a priori iteration certificate,
//! and certified real-time linear MPC built on it.

pub mod certified;
pub mod error;
pub mod fast_gradient;
pub mod linalg;
pub mod mpc;
pub mod oracle;
pub mod problem;
pub mod sim;

pub use certified::{
    certified_solve, certified_solve_with_budget, CertificationConstants, CertifiedSolveReport,
    ScalingMode, SolveExit,
};
pub use error::{Error, Result};
pub use fast_gradient::{FastGradientState, SmoothnessPair};
pub use oracle::{solve_reference, stationary_point, OracleSolution};
pub use problem::{QpProblem, SuboptimalityPair};
