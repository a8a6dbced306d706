use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SceneBounds, VoxelGridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullConditionMode {
    /// The unconditional branch sees an all-zero condition feature block.
    Zeros,
}

/// Architecture hyper-parameters of the noise predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub grid: VoxelGridSpec,
    pub voxel_channels: usize,
    pub time_embed_dim: usize,
    pub init_hidden: usize,
    pub mprb_kernels: [usize; 3],
    pub mprb_dilations: [usize; 3],
    pub unet_depth: usize,
    pub unet_width: usize,
    pub cond_channels: [usize; 4],
    pub match_dim: usize,
    pub point_channels: usize,
    pub weight_hidden: usize,
    pub head_hidden: usize,
    pub neighbors: usize,
    pub null_condition: NullConditionMode,
    /// Ablation switches.
    pub use_completion: bool,
    pub use_unet: bool,
    pub use_interaction: bool,
    /// When false every absolute-coordinate input is zeroed, leaving only
    /// relative geometry (translation-invariance probe).
    pub absolute_coords: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            grid: VoxelGridSpec::default(),
            voxel_channels: 16,
            time_embed_dim: 64,
            init_hidden: 32,
            mprb_kernels: [3, 3, 3],
            mprb_dilations: [1, 2, 3],
            unet_depth: 2,
            unet_width: 32,
            cond_channels: [16, 32, 64, 128],
            match_dim: 64,
            point_channels: 32,
            weight_hidden: 32,
            head_hidden: 32,
            neighbors: 16,
            null_condition: NullConditionMode::Zeros,
            use_completion: true,
            use_unet: true,
            use_interaction: true,
            absolute_coords: true,
        }
    }
}

impl DenoiserConfig {
    /// Small model on a 32x32x8 grid used for the laptop-scale experiments.
    pub fn desk(bounds: SceneBounds) -> Self {
        Self {
            grid: VoxelGridSpec {
                resolution: [32, 32, 8],
                bounds,
            },
            time_embed_dim: 16,
            init_hidden: 16,
            unet_width: 16,
            point_channels: 16,
            weight_hidden: 16,
            head_hidden: 32,
            ..Self::default()
        }
    }

    /// Under a thousand parameters on an 8x8x4 grid, for gradient checks.
    pub fn toy(bounds: SceneBounds) -> Self {
        Self {
            grid: VoxelGridSpec {
                resolution: [8, 8, 4],
                bounds,
            },
            voxel_channels: 1,
            time_embed_dim: 4,
            init_hidden: 4,
            unet_depth: 2,
            unet_width: 2,
            cond_channels: [2, 3, 4, 5],
            match_dim: 4,
            point_channels: 2,
            weight_hidden: 4,
            head_hidden: 4,
            neighbors: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let positive = [
            ("denoiser.voxel_channels", self.voxel_channels),
            ("denoiser.init_hidden", self.init_hidden),
            ("denoiser.unet_depth", self.unet_depth),
            ("denoiser.unet_width", self.unet_width),
            ("denoiser.match_dim", self.match_dim),
            ("denoiser.point_channels", self.point_channels),
            ("denoiser.weight_hidden", self.weight_hidden),
            ("denoiser.head_hidden", self.head_hidden),
            ("denoiser.neighbors", self.neighbors),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::config("denoiser.time_embed_dim", "must be a positive even number"));
        }
        if self.cond_channels[0] == 0 || self.cond_channels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "denoiser.cond_channels",
                "must be positive and strictly increasing",
            ));
        }
        if self.mprb_kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::config("denoiser.mprb_kernels", "kernel sizes must be odd"));
        }
        if self.mprb_dilations.contains(&0) {
            return Err(Error::config("denoiser.mprb_dilations", "must be positive"));
        }
        let scale = 1usize << (self.unet_depth - 1);
        let [nx, ny, _] = self.grid.resolution;
        if nx % scale != 0 || ny % scale != 0 {
            return Err(Error::config(
                "denoiser.unet_depth",
                format!("grid {nx}x{ny} is not divisible by {scale} at depth {}", self.unet_depth),
            ));
        }
        Ok(())
    }

    /// True when the grid has fewer voxels than `points`; callers may warn.
    pub fn grid_smaller_than(&self, points: usize) -> bool {
        self.grid.num_voxels() <= points
    }
}
