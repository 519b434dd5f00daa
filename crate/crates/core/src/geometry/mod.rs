//! Meshes, voxel grids, cameras and images, plus the geometric kernels built
//! on them: trilinear sampling, inside/outside tests, voxelization, marching
//! cubes and the evaluation metrics.

mod bvh;
mod camera;
mod grid;
mod image;
mod inside;
pub mod io;
mod marching_cubes;
mod mc_tables;
mod mesh;
mod metrics;

pub use bvh::{ClosestHit, TriangleBvh};
pub use camera::Camera;
pub use grid::{GridKind, GridLayout, VoxelGrid};
pub use image::Image;
pub use inside::{point_in_mesh, voxelize, InsideTester};
pub use marching_cubes::marching_cubes;
pub use mesh::{closest_point_barycentric, SurfacePoint, TriMesh};
pub use metrics::{chamfer_distance, chamfer_distance_cm, masked_iou, voxel_iou, PointIndex};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Trilinear value of `grid` at `p` (clamped to the lattice).
pub fn trilinear_sample(grid: &VoxelGrid, p: Vec3) -> f64 {
    grid.trilinear_sample(p)
}
