//! Random billiards in a tube whose walls carry convex microstructures.
//!
//! The crate covers the microstructure geometry, the random angle map
//! Ψ_R with its Jacobians, seeded Monte Carlo ensembles of the angle
//! chain, the limit-law statistics, and Ulam discretisations of the
//! averaged and twisted transfer operators.

pub mod checks;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod output;
pub mod random_process;
pub mod rng;
pub mod statistics;
pub mod transfer;

pub use error::{ConfigError, DynamicsError, GeometryError, ProcessError, StatsError, TransferError};
