//! Simulation of an IoT network that shares an unlicensed wideband spectrum
//! with incumbent transmitters.
//!
//! The pipeline per Monte Carlo realization is: topology ([`model`]) →
//! link tables and energy samples ([`propagation`]) → sensing assignment
//! ([`scheduler`]) → diffusion sensing ([`sensing`]) → spatio-spectral
//! allocation ([`allocation`]) → evaluation ([`metrics`]). The [`harness`]
//! module wires these together from scenario files and presets, and
//! [`deflection`] holds the analytical detector-quality study.

pub mod allocation;
pub mod deflection;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod propagation;
pub mod rng;
pub mod scheduler;
pub mod sensing;

pub use error::{Error, Result};
