//! Scene-level LiDAR point cloud upsampling with a conditional local-noise
//! diffusion model, voxel feature completion and point-voxel interaction.

pub mod config;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod scenegen;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
