//! Dynamic positioning of a 3-DOF ship under steady wind: simulator,
//! backstepping controller with a third-order reference filter, and
//! CMA-ES tuning of the 12 gain entries and 6 filter coefficients against a
//! saturation-penalized tracking objective.

pub mod cmaes;
pub mod controller;
pub mod error;
pub mod harness;
pub mod objective;
pub mod params;
pub mod reference;
pub mod scenario;
pub mod ship;

pub use error::{Error, Result};
pub use params::TuningParams;
