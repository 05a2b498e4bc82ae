//! Pyramid-diffusion exposure correction with illumination prompts.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod dit;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod prompt;
pub mod train;

pub use error::{Error, Result};
