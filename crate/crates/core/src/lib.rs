//! Option-implied characteristic functions matched to affine jump-diffusion models
//! through a collapsed Kalman filter.

pub mod ajd;
pub mod blackscholes;
pub mod error;
pub mod estimate;
pub mod io;
pub mod linalg;
pub mod montecarlo;
pub mod optim;
pub mod prep;
pub mod simulate;
pub mod spanning;
pub mod statespace;
pub mod surface;

pub use error::{Error, Result};
