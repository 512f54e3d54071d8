//! Simulation of a driven cavity coupled to three-level artificial atoms:
//! dressed-state spectra, quantum-jump trajectories, master-equation
//! integration, Husimi Q functions and telegraph dwell-time statistics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod ode;
pub mod solvers;
pub mod lindblad;
pub mod operators;

pub use error::{Error, ErrorCategory, Result};
