//! Simulation of `Sz Sz` entanglement generation between two spinor
//! Bose-Einstein condensates coupled through a common cavity mode.
//!
//! The library evolves the two-BEC density matrix under a Lindblad master
//! equation with spontaneous emission and cavity loss, using an implicit
//! backward Euler integrator over a truncated Fock basis, and measures the
//! resulting entanglement (logarithmic negativity), partial Q-distributions
//! and scaling behavior toward large atom number.

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod entanglement;
pub mod error;
pub mod fockspace;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod qdist;

pub use error::{Error, Result};
