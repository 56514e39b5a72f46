//! Scaled Maxwell-Bloch laboratory: stiff TM solver, WKB profile hierarchy,
//! Schrodinger-Boltzmann reduced model and the asymptotic-rate harness.

pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod profile_builder;
pub mod quantum;
pub mod reduced_model;
pub mod spectral;
pub mod stiff_solver;

pub use error::{Error, Result};
