//! State-transition diffusion imputation for control-driven multivariate time series.
//!
//! A conditional DDPM learns the one-step transition kernel
//! `p(x_t | x_{t-1}, u_t, w_t)`; gaps are filled by running one full reverse
//! chain per missing step, each conditioned on the previously generated state.

pub mod checkpoint;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod impute;
pub mod model;
pub mod train;

pub use error::{Error, Result};
