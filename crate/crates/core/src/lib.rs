//! Diffusion-based OFDM channel estimation toolkit.

pub mod error;
pub mod numcore;

pub use error::{Error, Result};
pub mod chansim;
pub mod grid;
pub mod seeding;

pub use grid::ResourceGrid;
pub mod pilots;
pub mod estimators;
pub mod diffusion;
pub mod denoiser;
pub mod trainer;
pub mod sampler;
pub mod receiver;
