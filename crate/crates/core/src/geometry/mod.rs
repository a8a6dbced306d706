//! Point containers, voxelization, neighbor search, sampling and cloud I/O.

pub mod cloud;
pub mod io;
pub mod neighbors;
pub mod voxel;

pub use cloud::{Features, Point3, PointCloud};
pub use io::{load_kitti_bin, read_cloud, read_ply, read_xyz, save_kitti_bin, write_cloud, write_ply, write_xyz};
pub use neighbors::{fps, fps_from, knn, nearest_neighbor, Neighbors};
pub use voxel::{voxel_centers, voxelize, SceneBounds, VoxelAssignment, VoxelGridSpec};
