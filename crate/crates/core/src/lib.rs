//! Gaussian multiplicative chaos with log-type kernels in dimensions 1 to 3.

pub mod chaos;
pub mod config;
pub mod dump;
pub mod error;
pub mod estimators;
pub mod fft;
pub mod field;
pub mod kernels;
pub mod oracles;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
