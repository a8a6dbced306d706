//! The noise predictor: voxel feature initialization and completion, planar
//! U-Net refinement, condition encoding and point-voxel interaction.

pub mod config;
pub mod manifest;
pub mod model;
mod ops;

pub use config::{DenoiserConfig, NullConditionMode};
pub use manifest::{LayerKind, LayerPath, LayerSpec, StructuralAudit};
pub use model::{time_embed, Denoiser, InteractionBundle, InteractionVars, Trace, VoxelFeatureGrid, POS_FEATURES};
