//! Command-line front end for the paraxial white-noise model.
//!
//! The numerical work lives in `paraxial-core`; this crate adds the
//! configuration format, binary field and medium dumps, a thread-pool
//! executor, reports and plots, and the `paraxial` binary.

pub mod cli;
pub mod commands;
pub mod config;
pub mod exec;
pub mod formats;
pub mod plot;
pub mod report;
