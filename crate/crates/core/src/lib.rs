//! Closed-system simulator and analysis toolkit for rapid-quench quantum
//! annealing: spin-glass and search Hamiltonians, exact state-vector
//! evolution under piecewise schedules, local dynamic-coefficient analysis,
//! quench-parameter heuristics, spectral-gap scans, and batch experiments.

pub mod bench;
pub mod dyncoeff;
pub mod error;
pub mod evolve;
pub mod heuristics;
pub mod ising;
pub mod spectral;

pub use error::{Error, Result};
