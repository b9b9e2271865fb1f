//! Near-field beam alignment for extremely large uniform linear arrays.
//!
//! The library models an uplink in which a base station sweeps a DFT codebook
//! over a near-field line-of-sight channel, then aligns a downlink beam in two
//! stages: a model-based coarse stage (maximum-likelihood range estimate plus
//! a penalized sliding-window search for the energy-spread window) and a
//! learned fine stage (a small 1D CNN with spatial attention that refines the
//! angle inside that window). Reference baselines, FLOP accounting, and a
//! seeded Monte Carlo harness round out the crate.
//!
//! Modules:
//! - [`numerics`]: Fresnel integrals, Cornu-spiral geometry, the angular-domain
//!   correlation function and its upper bound, energy-spread widths.
//! - [`channel`]: array geometry, steering vectors, DFT/polar codebooks, the
//!   noisy measurement model.
//! - [`rng`]: counter-based splittable deterministic random streams.
//! - [`coarse`]: stage-one range estimation and window detection.
//! - [`finenet`]: stage-two network, training, and weight serialization.
//! - [`baselines`]: least-squares, polar exhaustive search, support-width
//!   joint estimation, and complexity models.
//! - [`harness`]: Monte Carlo engine, metrics, CSV/SVG emission, config.

// Guards of the form `!(x > 0.0)` are deliberate: unlike `x <= 0.0` they
// also reject NaN inputs.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;

pub mod baselines;
pub mod channel;
pub mod coarse;
pub mod finenet;
pub mod harness;
pub mod numerics;
pub mod rng;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument violated a documented precondition.
    Domain(String),
    /// Configuration file or CLI configuration problem.
    Config(String),
    /// A numerical procedure failed (divergence, non-finite values).
    Numerical(String),
    /// File I/O failure, with context.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;

/// Environment variable capping the worker count for every parallel stage.
pub const THREADS_ENV: &str = "NFA_THREADS";

/// Worker cap from the environment; 0 lets a pool pick its own size.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0)
}
