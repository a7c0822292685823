//! Bayesian hierarchical random-effects probit models for longitudinal
//! binary-outcome panels.
//!
//! The crate fits two random-effect specifications by blocked
//! data-augmentation Gibbs sampling — a Gaussian random intercept in the
//! uncentered parametrization and an overfitted discrete mixture — plus a
//! collapsed-Gibbs binomial mixture for grouped count data. On top of the
//! posterior draws it computes partial-information predictive probabilities
//! for each person-occasion, bins them into risk groups under several
//! threshold schemes, and produces calibration tables, wrong-bin matrices,
//! credible-interval reports, and certainty-threshold flagging, along with
//! quadrature-based simulation studies of interval width.

pub mod binmix;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gibbs;
pub mod kernels;
pub mod linalg;
pub mod rng;
pub mod risk;
pub mod sim;
pub mod synthetic;

pub use error::{Error, Result};
