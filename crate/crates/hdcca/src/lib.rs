//! High-dimensional canonical correlation analysis.
//!
//! Sample CCA, detection of signal spikes above the noise bulk, estimation of
//! signal strength and of the angles between estimated and true canonical
//! variables, exact finite-dimensional master equations, and a Monte Carlo
//! harness for synthetic experiments.

pub mod cli_io;
pub mod inference;
pub mod linalg_cca;
pub mod master;
pub mod simulate;
pub mod wachter;
