//! Simulator for a four-stroke quantum engine whose working medium is a pair
//! of trapped-ion qubits and whose load is a motional mode of the crystal.
//!
//! Modules, bottom up:
//! - [`opalg`]: sparse operators, states, tensor layout, partial trace
//! - [`dynamics`]: fixed-step RK4 Lindblad propagation
//! - [`engine`]: stroke Hamiltonians, the cycle, sweeps, transfer-time scans
//! - [`thermo`]: populations, ergotropy, efficiencies, concurrence
//! - [`sideband`]: blue-sideband response curves and population fits
//! - [`cli`]: config files, CSV tables and the batch commands

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod opalg;
pub mod sideband;
pub mod thermo;

pub use error::{Error, Result};
