//! Synthetic ultra-wideband (UWB) cabin-positioning toolkit.
//!
//! The crate models the full pipeline of a seat-level indoor positioning
//! system: two-way-ranging time-of-flight arithmetic, a calibrated synthetic
//! channel generator (distance bias, heavy-tailed Johnson S_U noise, channel
//! impulse responses, first-path power), classical per-anchor corrections
//! (static offset, linear regression), a from-scratch multilayer perceptron
//! with four output heads, nonlinear least-squares multilateration, seat
//! assignment, and Monte Carlo studies of anchor augmentation and
//! error scaling.
//!
//! Everything is deterministic given a 64-bit seed; datasets, models, and
//! reports round-trip through documented JSON / JSON-Lines / CSV formats.

pub mod channel;
pub mod correction;
pub mod error;
pub mod geometry;
pub mod localization;
pub mod montecarlo;
pub mod nn;
pub mod ranging;
pub mod rng;

pub use error::{Error, Result};
