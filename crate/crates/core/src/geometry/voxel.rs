use serde::{Deserialize, Serialize};

use super::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

/// Axis-aligned metric extent of a voxel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min_corner: Point3,
    pub max_corner: Point3,
}

impl SceneBounds {
    pub fn new(min_corner: Point3, max_corner: Point3) -> Result<Self> {
        let b = Self {
            min_corner,
            max_corner,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            let (lo, hi) = (self.min_corner[a], self.max_corner[a]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "bounds axis {a}: min {lo} must be below max {hi}"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|a| p[a] >= self.min_corner[a] && p[a] <= self.max_corner[a])
    }

    pub fn translated(&self, by: Point3) -> Self {
        Self {
            min_corner: super::cloud::add(self.min_corner, by),
            max_corner: super::cloud::add(self.max_corner, by),
        }
    }
}

impl Default for SceneBounds {
    fn default() -> Self {
        Self {
            min_corner: [-25.6, -25.6, -3.2],
            max_corner: [25.6, 25.6, 3.2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub resolution: [usize; 3],
    pub bounds: SceneBounds,
}

impl Default for VoxelGridSpec {
    fn default() -> Self {
        Self {
            resolution: [128, 128, 16],
            bounds: SceneBounds::default(),
        }
    }
}

impl VoxelGridSpec {
    pub fn new(resolution: [usize; 3], bounds: SceneBounds) -> Result<Self> {
        let s = Self { resolution, bounds };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.resolution.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "grid resolution {:?} must be positive on every axis",
                self.resolution
            )));
        }
        Ok(())
    }

    pub fn voxel_size(&self) -> Point3 {
        let b = &self.bounds;
        [0, 1, 2].map(|a| (b.max_corner[a] - b.min_corner[a]) / self.resolution[a] as f64)
    }

    pub fn num_voxels(&self) -> usize {
        self.resolution.iter().product()
    }

    #[inline]
    pub fn linear_index(&self, idx: [usize; 3]) -> usize {
        let [_, ny, nz] = self.resolution;
        (idx[0] * ny + idx[1]) * nz + idx[2]
    }

    #[inline]
    pub fn unravel(&self, linear: usize) -> [usize; 3] {
        let [_, ny, nz] = self.resolution;
        [linear / (ny * nz), (linear / nz) % ny, linear % nz]
    }

    /// Center of a voxel; the caller guarantees the index is in range.
    #[inline]
    pub fn center_unchecked(&self, idx: [usize; 3]) -> Point3 {
        let size = self.voxel_size();
        [0, 1, 2].map(|a| self.bounds.min_corner[a] + (idx[a] as f64 + 0.5) * size[a])
    }
}

/// Per-point voxel membership produced by [`voxelize`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelAssignment {
    /// `None` for points outside the grid bounds.
    pub voxel_index: Vec<Option<[usize; 3]>>,
    /// Point minus voxel center; zero for out-of-bounds points.
    pub offset: Vec<Point3>,
    /// Linear indices of occupied voxels, ascending.
    pub occupied: Vec<usize>,
    /// For every point, its position in `occupied`.
    pub slot: Vec<Option<usize>>,
}

impl VoxelAssignment {
    pub fn in_bounds(&self, i: usize) -> bool {
        self.voxel_index[i].is_some()
    }

    pub fn occupied_indices(&self, spec: &VoxelGridSpec) -> Vec<[usize; 3]> {
        self.occupied.iter().map(|&l| spec.unravel(l)).collect()
    }
}

pub fn voxelize(cloud: &PointCloud, spec: &VoxelGridSpec) -> Result<VoxelAssignment> {
    spec.validate()?;
    let size = spec.voxel_size();
    let n = cloud.len();
    let mut voxel_index = Vec::with_capacity(n);
    let mut offset = Vec::with_capacity(n);
    for &p in cloud.points() {
        if !spec.bounds.contains(p) {
            voxel_index.push(None);
            offset.push([0.0; 3]);
            continue;
        }
        let idx = [0, 1, 2].map(|a| {
            let f = ((p[a] - spec.bounds.min_corner[a]) / size[a]).floor();
            (f.max(0.0) as usize).min(spec.resolution[a] - 1)
        });
        let c = spec.center_unchecked(idx);
        voxel_index.push(Some(idx));
        offset.push([p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
    }
    let mut occupied: Vec<usize> = voxel_index
        .iter()
        .flatten()
        .map(|&idx| spec.linear_index(idx))
        .collect();
    occupied.sort_unstable();
    occupied.dedup();
    let slot = voxel_index
        .iter()
        .map(|v| {
            v.map(|idx| {
                occupied
                    .binary_search(&spec.linear_index(idx))
                    .expect("occupied contains every in-bounds voxel")
            })
        })
        .collect();
    Ok(VoxelAssignment {
        voxel_index,
        offset,
        occupied,
        slot,
    })
}

pub fn voxel_centers(spec: &VoxelGridSpec, indices: &[[usize; 3]]) -> Result<Vec<Point3>> {
    spec.validate()?;
    indices
        .iter()
        .map(|&idx| {
            if (0..3).any(|a| idx[a] >= spec.resolution[a]) {
                Err(Error::VoxelOutOfRange {
                    index: idx,
                    resolution: spec.resolution,
                })
            } else {
                Ok(spec.center_unchecked(idx))
            }
        })
        .collect()
}
