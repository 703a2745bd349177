//! RGB-D frames, datasets on disk, bounding-box estimation and analytic
//! verification scenes.

mod bbox;
mod dataset;
mod synthetic;

use nalgebra::Matrix4;

use crate::render::Camera;
use crate::{Error, Result};

pub use bbox::{estimate_bbox, BboxOptions};
pub use dataset::{load_dataset, save_dataset, INTRINSICS_FILE};
pub use synthetic::{
    analytic_sdf, look_at, orbit_poses, render_synthetic, AnalyticScene, Primitive, SceneFile,
    Shape, TrajectorySpec, BACKGROUND_GRAY, LIGHT_DIR,
};

/// Rotation tolerance for in-memory frames.
pub const POSE_TOLERANCE: f64 = 1e-5;
/// Rotation tolerance when reading pose files.
pub const POSE_FILE_TOLERANCE: f64 = 1e-3;

/// One posed RGB-D observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: u32,
    /// Row-major gray values in `[0, 1]`.
    pub gray: Vec<f32>,
    /// Row-major z-depth in meters, 0 where invalid.
    pub depth: Vec<f32>,
    /// Camera-to-world transform.
    pub pose: Matrix4<f64>,
}

impl Frame {
    pub fn validate(&self, camera: &Camera, tolerance: f64) -> Result<()> {
        let n = camera.pixel_count();
        if self.gray.len() != n || self.depth.len() != n {
            return Err(Error::Precondition(format!(
                "frame {}: image size does not match the camera",
                self.id
            )));
        }
        check_rigid(&self.pose, tolerance)
            .map(|_| ())
            .map_err(|e| Error::Precondition(format!("frame {}: {e}", self.id)))
    }
}

/// Largest deviation of `RᵀR` from the identity, or an error message when
/// the matrix is not a rigid transform within `tolerance`.
pub fn check_rigid(pose: &Matrix4<f64>, tolerance: f64) -> std::result::Result<f64, String> {
    if !pose.iter().all(|v| v.is_finite()) {
        return Err("pose has non-finite entries".into());
    }
    let bottom = pose.fixed_view::<1, 4>(3, 0);
    if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > tolerance {
        return Err("pose bottom row must be 0 0 0 1".into());
    }
    let r = pose.fixed_view::<3, 3>(0, 0);
    let err = (r.transpose() * r - nalgebra::Matrix3::identity()).amax();
    if err > tolerance {
        return Err(format!("rotation is not orthonormal (error {err:.2e})"));
    }
    if r.determinant() < 0.0 {
        return Err("rotation has negative determinant".into());
    }
    Ok(err)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub camera: Camera,
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.frames.is_empty() {
            return Err(Error::Precondition("dataset has no frames".into()));
        }
        for f in &self.frames {
            f.validate(&self.camera, POSE_FILE_TOLERANCE)?;
        }
        Ok(())
    }
}

/// ITU-R BT.601 luma of linear RGB in `[0, 1]`.
#[inline]
pub fn luminance(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}
