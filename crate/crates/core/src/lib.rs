//! Gaussian-process active mapping with the attentive kernel and stationary
//! and non-stationary baselines.

pub mod autodiff;
pub mod bench;
pub mod env;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod planning;
pub mod rng;

pub use error::{Error, Result};
