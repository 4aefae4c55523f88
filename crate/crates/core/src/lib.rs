//! Simulation and verification toolkit for the linear inertial-particle
//! dispersion SDE and its rotation-reduced processes.

pub mod airy;
pub mod certificate;
pub mod control;
pub mod density;
pub mod error;
pub mod lyapunov;
pub mod noise;
pub mod projective;
pub mod quad;
pub mod reduced;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use noise::{FlowStatistics, NoiseFactorization};
pub use sde::{DispersionState, RenormalizedTrajectory, Scheme};
