//! Mean-field linear-quadratic stochastic control on long horizons.
//!
//! The crate solves the finite-horizon differential Riccati pair and the
//! stationary algebraic Riccati pair, the static KKT problem that locates the
//! turnpike, and runs coupled Monte Carlo ensembles that measure how close the
//! finite-horizon optimal pair stays to the stationary processes.
#![allow(non_snake_case)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod rng;
pub mod simulate;
pub mod static_opt;

pub use error::{MflqError, Result};
pub use model::{Dimensions, HatCoefficients, MapEvaluation, ProblemData};
pub use riccati::{ArePair, RiccatiPath};
pub use simulate::{EnsembleStats, SimulationConfig};
pub use static_opt::StaticSolution;
