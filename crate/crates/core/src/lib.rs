//! Disparity-distribution supervision for stereo matching: discrete
//! Gaussian targets, soft-argmax regression, cost volumes, a small
//! reverse-mode autodiff engine, a toy training pipeline and file formats.

pub mod autodiff;
pub mod costvolume;
pub mod distributions;
pub mod error;
pub mod io;
pub mod losses;
pub mod pipeline;
pub mod regression;

pub use error::{Error, Result};
