//! Paraxial white-noise propagation in randomly layered media.
//!
//! The crate simulates the coupled Helmholtz/Ornstein-Uhlenbeck system in the
//! paraxial scaling, its limiting Itô equation, and the homogenization
//! statistics that connect them. It is `no_std` with `alloc`; IO and the
//! command line live in the companion `paraxial` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
mod error;
pub mod exact;
pub mod fft;
pub mod fullmodel;
pub mod ensemble;
pub mod grid;
pub mod homog;
pub mod noise;
pub mod scales;
pub mod spde;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
