//! Guaranteed retrodiction strategies for the mean king problem.
//!
//! Given `k` orthonormal bases of a `d`-dimensional Hilbert space, this crate
//! decides whether Alice has a strategy that names the king's measurement
//! outcome with certainty, builds that strategy (a maximally entangled
//! preparation plus a POVM on the doubled space) from a classical joint model
//! of the transition probabilities, checks it by simulation, and estimates how
//! often such strategies exist for Haar-random bases.
//!
//! Conventions: basis indices `b` run over `0..k` and outcome indices `i` over
//! `0..d`. A guessing function `x` is encoded as `Σ_b x(b)·d^b`.

pub mod bases;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod sdp;
pub mod strategy;

pub use bases::{BasisSet, SpanClassification, SpanLabel, TransitionTensor};
pub use error::{Error, Result};
pub use model::{GuessFunction, JointDistribution};
pub use strategy::Strategy;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
