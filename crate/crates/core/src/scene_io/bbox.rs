use super::Dataset;
use crate::geom::{Aabb, Vec3};
use crate::render::{pose_origin, transform_dir};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BboxOptions {
    /// Use every `stride`-th pixel in x and y.
    pub stride: u32,
    /// Added on all six faces, meters. Usually twice the truncation distance.
    pub margin: f64,
    /// Per-axis lower/upper percentiles of the back-projected points, in
    /// `[0, 100]`. `(0, 100)` keeps every point.
    pub percentiles: (f64, f64),
}

impl Default for BboxOptions {
    fn default() -> Self {
        Self {
            stride: 2,
            margin: 0.1,
            percentiles: (0.0, 100.0),
        }
    }
}

/// Axis-aligned box around the back-projection of all valid depth pixels,
/// grown by the margin.
pub fn estimate_bbox(dataset: &Dataset, opts: &BboxOptions) -> Result<Aabb> {
    let cam = &dataset.camera;
    let stride = opts.stride.max(1);
    let mut coords: [Vec<f64>; 3] = Default::default();
    for f in &dataset.frames {
        let o = pose_origin(&f.pose);
        for y in (0..cam.height).step_by(stride as usize) {
            for x in (0..cam.width).step_by(stride as usize) {
                let id = y * cam.width + x;
                let z = f.depth[id as usize] as f64;
                if !(z > 0.0) {
                    continue;
                }
                let p = o + transform_dir(&f.pose, &(cam.pixel_direction(id) * z));
                for a in 0..3 {
                    coords[a].push(p[a]);
                }
            }
        }
    }
    if coords[0].is_empty() {
        return Err(Error::Precondition("no valid depth in any frame".into()));
    }
    let (lo, hi) = opts.percentiles;
    let mut min = Vec3::zeros();
    let mut max = Vec3::zeros();
    for a in 0..3 {
        let c = &mut coords[a];
        c.sort_by(f64::total_cmp);
        let pick = |p: f64| {
            let i = ((p / 100.0) * (c.len() - 1) as f64).round() as usize;
            c[i.min(c.len() - 1)]
        };
        min[a] = pick(lo);
        max[a] = pick(hi);
    }
    Ok(Aabb::new(min, max).expanded(opts.margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::Camera;
    use crate::scene_io::Frame;
    use nalgebra::Matrix4;

    fn plane(d: f32, pose: Matrix4<f64>) -> Frame {
        Frame {
            id: 0,
            gray: vec![0.5; 80 * 60],
            depth: vec![d; 80 * 60],
            pose,
        }
    }

    fn cam() -> Camera {
        Camera {
            fx: 50.0,
            fy: 50.0,
            cx: 40.0,
            cy: 30.0,
            width: 80,
            height: 60,
        }
    }

    #[test]
    fn contains_plane_with_margin() {
        let ds = Dataset {
            camera: cam(),
            frames: vec![plane(2.0, Matrix4::identity())],
        };
        let opts = BboxOptions {
            stride: 1,
            margin: 0.1,
            ..Default::default()
        };
        let bb = estimate_bbox(&ds, &opts).unwrap();
        assert!((bb.min[2] - 1.9).abs() < 1e-9 && (bb.max[2] - 2.1).abs() < 1e-9);
        // corner pixel centers at x = (0.5 - 40) / 50 * 2
        let x0 = (0.5 - 40.0) / 50.0 * 2.0;
        assert!((bb.min[0] - (x0 - 0.1)).abs() < 1e-9);
        let x1 = (79.5 - 40.0) / 50.0 * 2.0;
        assert!((bb.max[0] - (x1 + 0.1)).abs() < 1e-9);
        let tight = estimate_bbox(&ds, &BboxOptions { margin: 0.0, stride: 1, ..opts }).unwrap();
        for a in 0..3 {
            assert!(bb.min[a] < tight.min[a] && bb.max[a] > tight.max[a]);
        }
    }

    #[test]
    fn more_frames_never_shrink() {
        let mut pose = Matrix4::identity();
        pose[(0, 3)] = 1.5;
        let one = Dataset {
            camera: cam(),
            frames: vec![plane(2.0, Matrix4::identity())],
        };
        let mut two = one.clone();
        two.frames.push(plane(3.0, pose));
        let a = estimate_bbox(&one, &BboxOptions::default()).unwrap();
        let b = estimate_bbox(&two, &BboxOptions::default()).unwrap();
        for k in 0..3 {
            assert!(b.min[k] <= a.min[k] && b.max[k] >= a.max[k]);
        }
    }

    #[test]
    fn no_depth_is_an_error() {
        let ds = Dataset {
            camera: cam(),
            frames: vec![plane(0.0, Matrix4::identity())],
        };
        assert!(estimate_bbox(&ds, &BboxOptions::default()).is_err());
    }
}
