//! Joint beamforming and antenna-position optimization for a movable-antenna
//! integrated sensing and communication transmitter.
//!
//! The transmitter serves K single-antenna users while illuminating a radar
//! target among clutter. The design maximizes a weighted sum of the users'
//! rates and the sensing mutual information by alternating between a
//! closed-form beamformer update, a per-antenna position update, and the
//! auxiliary-variable updates of a fractional-programming surrogate.

pub mod beamform;
pub mod error;
pub mod fp;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod position;
pub mod sensing;
pub mod solver;

pub use error::{Error, Result};
pub use fp::{AuxiliaryState, XiMode};
pub use metrics::MetricsReport;
pub use model::{AntennaPositions, Beamformer, Scene, SystemConfig};
pub use solver::{solve, Scheme, SolveResult};
