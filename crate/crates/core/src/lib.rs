//! Surface reconstruction from posed RGB-D frames by direct optimization of
//! signed-distance and grayscale radiance values stored on a sparse voxel
//! grid that subdivides itself where the fit is poor.
//!
//! The pipeline is split into a handful of modules:
//!
//! * [`grid`]: the hierarchical voxel structure (node store, voxel table,
//!   per-level key index), terminal-voxel tracing, subdivision and snapshots.
//! * [`field`]: trilinear interpolation of node values and its backward pass.
//! * [`render`]: rays, point sampling, SDF-to-opacity conversion and
//!   transmittance-weighted compositing, forward and backward.
//! * [`train`]: losses, per-voxel loss bookkeeping, subdivision candidate
//!   selection and the optimization loop.
//! * [`scene_io`]: RGB-D datasets on disk, bounding-box estimation and an
//!   analytic scene renderer used for verification.
//! * [`mesh`]: volume sampling, marching cubes, PLY/OBJ export and
//!   reconstruction metrics.
//! * [`cli`]: the `synth`, `recon`, `mesh` and `eval` commands.

pub mod cli;
mod error;
pub mod field;
pub mod geom;
pub mod grid;
mod mc_tables;
pub mod mesh;
pub mod render;
pub mod scene_io;
pub mod train;

pub use error::{Error, Result};
pub use geom::{Aabb, Vec3};
pub use grid::{DynamicGrid, GridConfig, VoxelRef};
