//! Estimation of the angular velocity of a rotation process from noisy,
//! partial observations on a Stiefel manifold.
//!
//! The observation `P_t` is the first `k` columns of a hidden rotation
//! `S_t in SO(n)` driven by an angular velocity `x_t in so(n)` and
//! multiplicative Brownian noise. Sampled observations are turned into
//! anti-development increments in so(n) ([`antidev`]), where the noise is
//! additive, and then filtered with a particle filter or, for full
//! observations, a Kalman-Bucy filter ([`filters`]).

pub mod antidev;
mod csvio;
pub mod error;
pub mod filters;
pub mod geometry;
pub mod harness;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use geometry::{Rotation, SkewMatrix, StiefelPoint, StiefelTangent};
