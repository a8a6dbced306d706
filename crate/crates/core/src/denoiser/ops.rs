//! Value-level entry points for each stage of the noise predictor. Each call
//! records a fresh graph and returns plain tensors.

use super::model::{Denoiser, VoxelFeatureGrid};
use crate::diffusion::NoiseTensor;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, VoxelAssignment};
use crate::nn::{Graph, Tensor, Var};

impl Denoiser {
    fn grid_from(&self, g: &Graph, v: Var, assign_occupied: &[usize]) -> VoxelFeatureGrid {
        let spec = &self.config().grid;
        let mut occupancy = vec![false; spec.num_voxels()];
        for &l in assign_occupied {
            occupancy[l] = true;
        }
        VoxelFeatureGrid {
            resolution: spec.resolution,
            channels: self.config().voxel_channels,
            features: g.value(v).data.clone(),
            occupancy,
        }
    }

    fn grid_input(&self, g: &mut Graph, grid: &VoxelFeatureGrid) -> Result<Var> {
        let cfg = self.config();
        if grid.resolution != cfg.grid.resolution {
            return Err(Error::ShapeMismatch(format!(
                "grid {:?} vs configured {:?}",
                grid.resolution, cfg.grid.resolution
            )));
        }
        if grid.channels != cfg.voxel_channels {
            return Err(Error::ShapeMismatch(format!(
                "grid has {} channels, model expects {}",
                grid.channels, cfg.voxel_channels
            )));
        }
        Ok(g.input(Tensor::new(cfg.grid.num_voxels(), grid.channels, grid.features.clone())))
    }

    pub fn init_voxel_features(
        &self,
        noisy: &PointCloud,
        assign: &VoxelAssignment,
        t: usize,
    ) -> Result<VoxelFeatureGrid> {
        let mut g = Graph::new();
        let v = self.record_voxel_init(&mut g, noisy, assign, t)?;
        Ok(self.grid_from(&g, v, &assign.occupied))
    }

    pub fn voxel_completion(&self, grid: &VoxelFeatureGrid) -> Result<VoxelFeatureGrid> {
        let mut g = Graph::new();
        let x = self.grid_input(&mut g, grid)?;
        let y = self.record_completion(&mut g, x);
        Ok(VoxelFeatureGrid {
            features: g.value(y).data.clone(),
            ..grid.clone()
        })
    }

    pub fn planar_unet(&self, grid: &VoxelFeatureGrid) -> Result<VoxelFeatureGrid> {
        let mut g = Graph::new();
        let x = self.grid_input(&mut g, grid)?;
        let y = self.record_unet(&mut g, x);
        Ok(VoxelFeatureGrid {
            features: g.value(y).data.clone(),
            ..grid.clone()
        })
    }

    pub fn encode_condition(&self, sparse: &PointCloud) -> Tensor {
        let mut g = Graph::new();
        let v = self.record_condition(&mut g, sparse);
        g.value(v).clone()
    }

    /// All-zero block shaped like the encoder output for `n` sparse points.
    pub fn null_condition(&self, n: usize) -> Tensor {
        Tensor::zeros(n, self.config().cond_channels[3])
    }

    /// Returns `[N, match_dim]` features and the nearest sparse index per input point.
    pub fn match_features(
        &self,
        input: &PointCloud,
        sparse: &PointCloud,
        cond_feats: &Tensor,
    ) -> Result<(Tensor, Vec<usize>)> {
        let mut g = Graph::new();
        let f = g.input(cond_feats.clone());
        let (v, idx) = self.record_match(&mut g, input, sparse, f)?;
        Ok((g.value(v).clone(), idx))
    }

    pub fn point_voxel_interact(
        &self,
        input: &PointCloud,
        assign: &VoxelAssignment,
        grid: &VoxelFeatureGrid,
        f_match: &Tensor,
    ) -> Result<NoiseTensor> {
        if f_match.rows != input.len() || f_match.cols != self.config().match_dim {
            return Err(Error::ShapeMismatch(format!(
                "match features {}x{} for {} points",
                f_match.rows,
                f_match.cols,
                input.len()
            )));
        }
        let mut g = Graph::new();
        let grid = self.grid_input(&mut g, grid)?;
        let fm = g.input(f_match.clone());
        let fp = self.record_points(&mut g, input);
        let (eps, _) = self.record_interaction(&mut g, input, assign, grid, fp, fm)?;
        NoiseTensor::from_flat(&g.value(eps).data)
    }
}
