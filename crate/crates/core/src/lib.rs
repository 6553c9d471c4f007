//! Linear-quadratic mean-field games on truncated Hilbert spaces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod delay;
pub mod error;
pub mod eta;
pub mod fbs;
pub mod instances;
pub mod linops;
pub mod path;
pub mod problem;
pub mod quad;
pub mod riccati;
pub mod scenario;
pub mod verify;

pub use error::{MfgError, Result};
pub use linops::{GrowthBound, HilbertSpace, Operator, State};
pub use path::{OperatorPath, ScalarPath, TimeGrid, VectorPath};
pub use problem::MfgProblem;
