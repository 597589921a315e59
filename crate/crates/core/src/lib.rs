//! Simulation, quasi-maximum likelihood estimation and Monte Carlo checks
//! for the first-order random coefficient autoregression
//!
//! ```text
//! X_k = (φ + b_k) X_{k−1} + e_k,   E log|φ + b₀| ≥ 0,
//! ```
//!
//! in the explosive and unit-Lyapunov regimes, where `(φ, ω²)` is estimable
//! by QMLE but the noise variance `σ²` is not.

pub mod asymptotics;
pub mod cli;
pub mod csv;
pub mod error;
pub mod estimator;
pub mod innovations;
pub mod likelihood;
pub mod montecarlo;
pub mod numeric;
pub mod process;

pub use error::{Error, Result};
