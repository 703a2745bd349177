//! Analytic scenes rendered by sphere tracing, used for verification.

use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::{Dataset, Frame};
use crate::geom::{Aabb, Vec3};
use crate::render::{pose_origin, transform_dir, Camera};
use crate::{Error, Result};

/// Gray value of pixels whose ray misses every primitive.
pub const BACKGROUND_GRAY: f32 = 0.1;
/// Direction towards the light, world space (unnormalized).
pub const LIGHT_DIR: [f64; 3] = [0.4, 0.8, -0.45];
const AMBIENT: f64 = 0.25;
const HIT_EPS: f64 = 1e-5;
const MAX_STEPS: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned box given by its center and half extents.
    Box { center: [f64; 3], half: [f64; 3] },
}

impl Shape {
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (p - Vec3::from(*center)).norm() - radius,
            Shape::Box { center, half } => {
                let q = (p - Vec3::from(*center)).abs() - Vec3::from(*half);
                q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
            }
        }
    }

    pub fn bounds(&self) -> Aabb {
        match self {
            Shape::Sphere { center, radius } => {
                let c = Vec3::from(*center);
                Aabb::new(c.add_scalar(-radius), c.add_scalar(*radius))
            }
            Shape::Box { center, half } => {
                let c = Vec3::from(*center);
                let h = Vec3::from(*half);
                Aabb::new(c - h, c + h)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Sphere { radius, .. } => *radius > 0.0,
            Shape::Box { half, .. } => half.iter().all(|h| *h > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("primitive sizes must be positive".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default = "default_albedo")]
    pub albedo: f64,
}

fn default_albedo() -> f64 {
    0.8
}

/// Union of primitives; the signed distance is the minimum over members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    #[serde(rename = "primitive")]
    pub primitives: Vec<Primitive>,
}

impl AnalyticScene {
    pub fn unit_sphere() -> Self {
        Self {
            primitives: vec![Primitive {
                shape: Shape::Sphere {
                    center: [0.0; 3],
                    radius: 1.0,
                },
                albedo: 0.8,
            }],
        }
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        analytic_sdf(self, p)
    }

    /// Closest primitive and its distance.
    fn nearest(&self, p: &Vec3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, prim) in self.primitives.iter().enumerate() {
            let d = prim.shape.sdf(p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    pub fn bounds(&self) -> Aabb {
        self.primitives
            .iter()
            .fold(Aabb::empty(), |acc, p| acc.union(&p.shape.bounds()))
    }

    /// Central-difference normal of the union SDF.
    pub fn normal(&self, p: &Vec3) -> Vec3 {
        let h = 1e-6;
        let mut n = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            n[a] = self.sdf(&(p + e)) - self.sdf(&(p - e));
        }
        n.normalize()
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::Config("scene has no primitives".into()));
        }
        for p in &self.primitives {
            p.shape.validate()?;
        }
        Ok(())
    }

    /// First hit along a unit-direction ray: `(range, primitive index)`.
    pub fn trace(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<(f64, usize)> {
        let mut t = 0.0;
        for _ in 0..MAX_STEPS {
            let (i, d) = self.nearest(&(origin + t * dir));
            if d < HIT_EPS {
                return Some((self.refine(origin, dir, t), i));
            }
            t += d;
            if t > t_max {
                return None;
            }
        }
        None
    }

    /// Sphere tracing stops up to `HIT_EPS` short of the surface, which at
    /// grazing incidence is far from the hit along the ray. Brackets the sign
    /// change ahead of `t` and bisects it; a tangent near-miss keeps `t`.
    fn refine(&self, origin: &Vec3, dir: &Vec3, t: f64) -> f64 {
        let f = |s: f64| self.sdf(&(origin + s * dir));
        if f(t) <= 0.0 {
            return t;
        }
        let mut step = HIT_EPS;
        let mut hi = None;
        while step < 0.05 {
            if f(t + step) <= 0.0 {
                hi = Some(t + step);
                break;
            }
            step *= 2.0;
        }
        let Some(mut hi) = hi else { return t };
        let mut lo = t;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

pub fn analytic_sdf(scene: &AnalyticScene, p: &Vec3) -> f64 {
    scene.nearest(p).1
}

/// Camera-to-world pose at `eye` looking at `target`, with world `up`
/// mapped to image-up (camera `−y`).
pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Matrix4<f64> {
    let z = (target - eye).normalize();
    let x = z.cross(up).normalize();
    let y = z.cross(&x);
    let mut m = Matrix4::identity();
    for r in 0..3 {
        m[(r, 0)] = x[r];
        m[(r, 1)] = y[r];
        m[(r, 2)] = z[r];
        m[(r, 3)] = eye[r];
    }
    m
}

/// Orbit around a target with azimuth advancing uniformly and elevation
/// sweeping linearly between the two limits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub frames: usize,
    pub distance: f64,
    pub target: [f64; 3],
    /// Elevation range in degrees.
    pub elevation: [f64; 2],
    /// Number of full turns over the trajectory.
    pub turns: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            frames: 40,
            distance: 3.0,
            target: [0.0; 3],
            elevation: [-40.0, 40.0],
            turns: 2.0,
        }
    }
}

pub fn orbit_poses(spec: &TrajectorySpec) -> Vec<Matrix4<f64>> {
    let target = Vec3::from(spec.target);
    let up = Vec3::y();
    let n = spec.frames;
    (0..n)
        .map(|k| {
            let s = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 };
            let az = std::f64::consts::TAU * spec.turns * k as f64 / n.max(1) as f64;
            let el = (spec.elevation[0] + s * (spec.elevation[1] - spec.elevation[0])).to_radians();
            let eye = target
                + spec.distance * Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
            look_at(&eye, &target, &up)
        })
        .collect()
}

/// Gray and z-depth images of `scene` from each pose. Surfaces are shaded
/// Lambertian with a fixed directional light plus ambient term; misses get
/// depth 0 and [`BACKGROUND_GRAY`].
pub fn render_synthetic(scene: &AnalyticScene, camera: &Camera, poses: &[Matrix4<f64>]) -> Dataset {
    let light = Vec3::from(LIGHT_DIR).normalize();
    let t_max = 1e3;
    let frames = poses
        .iter()
        .enumerate()
        .map(|(k, pose)| {
            let o = pose_origin(pose);
            let n = camera.pixel_count();
            let mut gray = vec![BACKGROUND_GRAY; n];
            let mut depth = vec![0.0f32; n];
            for id in 0..n as u32 {
                let d_cam = camera.pixel_direction(id);
                let norm = d_cam.norm();
                let dir = transform_dir(pose, &(d_cam / norm));
                if let Some((t, prim)) = scene.trace(&o, &dir, t_max) {
                    let p = o + t * dir;
                    let shade = AMBIENT + (1.0 - AMBIENT) * scene.normal(&p).dot(&light).max(0.0);
                    gray[id as usize] = (scene.primitives[prim].albedo * shade).clamp(0.0, 1.0) as f32;
                    depth[id as usize] = (t / norm) as f32;
                }
            }
            Frame {
                id: k as u32,
                gray,
                depth,
                pose: *pose,
            }
        })
        .collect();
    Dataset {
        camera: *camera,
        frames,
    }
}

fn default_camera() -> Camera {
    Camera {
        fx: 100.0,
        fy: 100.0,
        cx: 80.0,
        cy: 60.0,
        width: 160,
        height: 120,
    }
}

/// Scene description file (TOML):
///
/// ```toml
/// [[primitive]]
/// kind = "sphere"
/// center = [0.0, 0.0, 0.0]
/// radius = 1.0
/// albedo = 0.8
///
/// [camera]
/// fx = 100.0
/// fy = 100.0
/// cx = 80.0
/// cy = 60.0
/// width = 160
/// height = 120
///
/// [trajectory]
/// frames = 40
/// distance = 3.0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    #[serde(flatten)]
    pub scene: AnalyticScene,
    #[serde(default = "default_camera")]
    pub camera: Camera,
    #[serde(default)]
    pub trajectory: TrajectorySpec,
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: SceneFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        f.scene.validate()?;
        f.camera.validate()?;
        if f.trajectory.frames == 0 || !(f.trajectory.distance > 0.0) {
            return Err(Error::Config("trajectory needs frames and a positive distance".into()));
        }
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::dataset(path, e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene file serializes")
    }

    pub fn render(&self) -> Dataset {
        render_synthetic(&self.scene, &self.camera, &orbit_poses(&self.trajectory))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::{check_rigid, POSE_TOLERANCE};

    #[test]
    fn box_and_sphere_distances() {
        let b = Shape::Box {
            center: [1.0, 0.0, 0.0],
            half: [0.5, 0.5, 0.5],
        };
        assert!((b.sdf(&Vec3::new(1.0, 0.0, 0.0)) + 0.5).abs() < 1e-12);
        assert!((b.sdf(&Vec3::new(2.0, 0.0, 0.0)) - 0.5).abs() < 1e-12);
        assert!((b.sdf(&Vec3::new(2.5, 1.5, 0.0)) - 2f64.sqrt()).abs() < 1e-12);
        let s = AnalyticScene::unit_sphere();
        assert!((s.sdf(&Vec3::new(0.0, 3.0, 0.0)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn orbit_poses_are_rigid_and_look_at_target() {
        let spec = TrajectorySpec::default();
        let poses = orbit_poses(&spec);
        assert_eq!(poses.len(), 40);
        for p in &poses {
            check_rigid(p, POSE_TOLERANCE).unwrap();
            let fwd = transform_dir(p, &Vec3::z());
            let to_target = (-pose_origin(p)).normalize();
            assert!((fwd - to_target).norm() < 1e-12);
            assert!((pose_origin(p).norm() - 3.0).abs() < 1e-12);
            // image-up points to world-up half space
            assert!(transform_dir(p, &-Vec3::y()).y >= -1e-12);
        }
    }

    #[test]
    fn sphere_depth_matches_closed_form() {
        let cam = Camera {
            fx: 40.0,
            fy: 40.0,
            cx: 16.0,
            cy: 12.0,
            width: 32,
            height: 24,
        };
        let pose = look_at(&Vec3::new(0.0, 0.0, -3.0), &Vec3::zeros(), &Vec3::y());
        let ds = render_synthetic(&AnalyticScene::unit_sphere(), &cam, &[pose]);
        let f = &ds.frames[0];
        let mut hits = 0;
        for id in 0..cam.pixel_count() as u32 {
            let d_cam = cam.pixel_direction(id);
            let dir = transform_dir(&pose, &d_cam.normalize());
            let o = pose_origin(&pose);
            // |o + t d|² = 1
            let bq = o.dot(&dir);
            let disc = bq * bq - (o.norm_squared() - 1.0);
            if disc > 1e-6 {
                let t = -bq - disc.sqrt();
                let z = t / d_cam.norm();
                assert!((f.depth[id as usize] as f64 - z).abs() < 1e-4, "pixel {id}");
                hits += 1;
            } else if disc < -1e-3 {
                assert_eq!(f.depth[id as usize], 0.0);
                assert_eq!(f.gray[id as usize], BACKGROUND_GRAY);
            }
        }
        assert!(hits > 50);
    }

    #[test]
    fn scene_file_round_trip() {
        let text = r#"
            [[primitive]]
            kind = "sphere"
            center = [-0.4, 0.0, 0.0]
            radius = 0.6

            [[primitive]]
            kind = "box"
            center = [0.6, 0.0, 0.0]
            half = [0.35, 0.35, 0.35]
            albedo = 0.5

            [trajectory]
            frames = 8
        "#;
        let f = SceneFile::parse(text).unwrap();
        assert_eq!(f.scene.primitives.len(), 2);
        assert_eq!(f.scene.primitives[0].albedo, 0.8);
        assert_eq!(f.trajectory.frames, 8);
        assert_eq!(f.trajectory.distance, 3.0);
        assert_eq!(f.camera.width, 160);
        let back = SceneFile::parse(&f.to_toml()).unwrap();
        assert_eq!(back, f);
        assert!(SceneFile::parse("primitive = []").is_err());
    }
}
