//! Rays, point sampling and SDF-based volume rendering.
//!
//! Camera convention: right-handed, `+z` forward, `+x` right, `+y` down
//! (image rows grow downwards). Pixel `(i, j)` has its center at continuous
//! image coordinates `(i + 0.5, j + 0.5)`. Poses map camera coordinates to
//! world coordinates.
//!
//! Along a ray with samples `0..n`, the opacity of interval `i` is
//!
//! ```text
//! α_i = max((σ_b(s_i) − σ_b(s_{i+1})) / σ_b(s_i), 0),   σ_b(x) = 1 / (1 + e^{−b x})
//! ```
//!
//! with `α_{n−1} = 0` since the last sample has no successor. Transmittance is
//! `T_i = Π_{j<i} (1 − α_j)`, weights are `w_i = T_i α_i`, and the rendered
//! gray value is the normalized weighted mean `Σ w_i r_i / Σ w_i`.

use nalgebra::Matrix4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::field::{CachedTracer, InterpResult};
use crate::geom::{Aabb, Vec3};
use crate::grid::DynamicGrid;
use crate::{Error, Result};

/// Rays whose total weight falls below this are treated as hitting nothing.
pub const NO_SURFACE_EPS: f64 = 1e-8;
/// Intervals shorter than this produce no samples.
pub const MIN_INTERVAL: f64 = 1e-9;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be nonzero".into()));
        }
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return Err(Error::Config("principal point must lie inside the image".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Unnormalized camera-space direction through continuous image
    /// coordinates `(u, v)`; its z component is 1.
    pub fn direction(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Camera-space direction through the center of pixel `id` (row-major).
    pub fn pixel_direction(&self, id: u32) -> Vec3 {
        let (i, j) = (id % self.width, id / self.width);
        self.direction(i as f64 + 0.5, j as f64 + 0.5)
    }

    /// Projects a camera-space point to continuous image coordinates.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// One pixel ray with its observations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction in world space.
    pub dir: Vec3,
    pub pixel: u32,
    pub frame: u32,
    /// Observed gray value in `[0, 1]`.
    pub gray: f64,
    /// Observed distance to the surface along the ray (meters), 0 if the
    /// pixel has no valid depth. Converted from the z-depth of the depth map.
    pub depth: f64,
}

impl Ray {
    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + t * self.dir
    }
}

/// Splits a camera-to-world matrix into rotation-applied direction and origin.
#[inline]
pub fn transform_dir(pose: &Matrix4<f64>, d: &Vec3) -> Vec3 {
    pose.fixed_view::<3, 3>(0, 0) * d
}

#[inline]
pub fn pose_origin(pose: &Matrix4<f64>) -> Vec3 {
    pose.fixed_view::<3, 1>(0, 3).into_owned()
}

/// Back-projects the centers of `pixels` into world-space rays, attaching the
/// observed gray and depth values.
pub fn generate_rays(
    camera: &Camera,
    pose: &Matrix4<f64>,
    frame_id: u32,
    gray: &[f32],
    depth: &[f32],
    pixels: &[u32],
) -> Vec<Ray> {
    let origin = pose_origin(pose);
    pixels
        .iter()
        .map(|&p| make_ray(camera, pose, &origin, frame_id, gray, depth, p))
        .collect()
}

#[inline]
pub(crate) fn make_ray(
    camera: &Camera,
    pose: &Matrix4<f64>,
    origin: &Vec3,
    frame_id: u32,
    gray: &[f32],
    depth: &[f32],
    pixel: u32,
) -> Ray {
    let d_cam = camera.pixel_direction(pixel);
    let norm = d_cam.norm();
    let z = depth[pixel as usize] as f64;
    Ray {
        origin: *origin,
        dir: transform_dir(pose, &(d_cam / norm)),
        pixel,
        frame: frame_id,
        gray: gray[pixel as usize] as f64,
        // z-depth → range: the unit direction has z component 1/norm
        depth: if z > 0.0 { z * norm } else { 0.0 },
    }
}

/// Slab intersection clipped to `t ≥ 0`.
pub fn intersect_bbox(origin: &Vec3, dir: &Vec3, bbox: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < bbox.min[a] || origin[a] > bbox.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let mut near = (bbox.min[a] - origin[a]) * inv;
        let mut far = (bbox.max[a] - origin[a]) * inv;
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// `n` stratified depths on `[t_near, t_far]`, one per equal-width stratum.
/// Without an RNG every depth sits at its stratum midpoint.
pub fn sample_uniform<R: Rng + ?Sized>(
    t_near: f64,
    t_far: f64,
    n: usize,
    rng: Option<&mut R>,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    sample_uniform_into(t_near, t_far, n, rng, &mut out);
    out
}

pub(crate) fn sample_uniform_into<R: Rng + ?Sized>(
    t_near: f64,
    t_far: f64,
    n: usize,
    mut rng: Option<&mut R>,
    out: &mut Vec<f64>,
) {
    out.clear();
    if n == 0 || !(t_far - t_near >= MIN_INTERVAL) {
        return;
    }
    let step = (t_far - t_near) / n as f64;
    for i in 0..n {
        let j = match rng.as_deref_mut() {
            Some(r) => r.random::<f64>(),
            None => 0.5,
        };
        out.push(t_near + (i as f64 + j) * step);
    }
}

/// Draws `n` depths by inverse-CDF sampling of the piecewise-constant density
/// given by `coarse_weights`, one bin per coarse stratum of `[t_near, t_far]`.
/// Falls back to uniform strata when the weights sum to zero. The CDF is
/// sampled at stratified positions `(k + u) / n`; `u = 0.5` without an RNG.
pub fn sample_importance<R: Rng + ?Sized>(
    t_near: f64,
    t_far: f64,
    coarse_weights: &[f64],
    n: usize,
    rng: Option<&mut R>,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut cdf = Vec::new();
    sample_importance_into(t_near, t_far, coarse_weights, n, rng, &mut cdf, &mut out);
    out
}

pub(crate) fn sample_importance_into<R: Rng + ?Sized>(
    t_near: f64,
    t_far: f64,
    coarse_weights: &[f64],
    n: usize,
    mut rng: Option<&mut R>,
    cdf: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    out.clear();
    let bins = coarse_weights.len();
    if n == 0 || bins == 0 || !(t_far - t_near >= MIN_INTERVAL) {
        return;
    }
    let total: f64 = coarse_weights.iter().map(|w| w.max(0.0)).sum();
    if !(total > 0.0) || !total.is_finite() {
        sample_uniform_into(t_near, t_far, n, rng, out);
        return;
    }
    cdf.clear();
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in coarse_weights {
        acc += w.max(0.0) / total;
        cdf.push(acc);
    }
    let width = (t_far - t_near) / bins as f64;
    let mut bin = 0usize;
    for k in 0..n {
        let j = match rng.as_deref_mut() {
            Some(r) => r.random::<f64>(),
            None => 0.5,
        };
        let u = ((k as f64 + j) / n as f64).min(acc);
        while bin + 1 < bins && cdf[bin + 1] < u {
            bin += 1;
        }
        // skip zero-mass bins so the sample lands where the weight is
        while bin + 1 < bins && cdf[bin + 1] <= cdf[bin] {
            bin += 1;
        }
        let mass = cdf[bin + 1] - cdf[bin];
        let frac = if mass > 0.0 { ((u - cdf[bin]) / mass).clamp(0.0, 1.0) } else { 0.5 };
        out.push(t_near + (bin as f64 + frac) * width);
    }
}

/// Numerically stable `ln σ(x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Opacity of the interval between two consecutive samples.
#[inline]
pub fn alpha(sdf_i: f64, sdf_next: f64, b: f64) -> f64 {
    let q = (log_sigmoid(b * sdf_next) - log_sigmoid(b * sdf_i)).exp();
    (1.0 - q).max(0.0)
}

/// Partial derivatives of the unclamped opacity `1 − q` with respect to
/// `(sdf_i, sdf_next, b)`; zero where the opacity is clamped.
#[inline]
pub fn alpha_grad(sdf_i: f64, sdf_next: f64, b: f64) -> (f64, f64, f64) {
    let q = (log_sigmoid(b * sdf_next) - log_sigmoid(b * sdf_i)).exp();
    if !(q < 1.0) {
        return (0.0, 0.0, 0.0);
    }
    let ci = sigmoid(-b * sdf_i);
    let cn = sigmoid(-b * sdf_next);
    (q * b * ci, -q * b * cn, q * (sdf_i * ci - sdf_next * cn))
}

/// Learnable sharpness `b > 0` of the logistic, stored as `ln b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sharpness {
    pub log_b: f64,
}

impl Sharpness {
    pub fn new(b: f64) -> Self {
        assert!(b > 0.0, "sharpness must be positive");
        Self { log_b: b.ln() }
    }

    #[inline]
    pub fn b(&self) -> f64 {
        self.log_b.exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleClass {
    /// Ray has no valid depth.
    Unclassified,
    FreeSpace,
    Truncation,
    Behind,
}

/// Per-ray samples in structure-of-arrays form. Buffers are reused across
/// rays.
#[derive(Clone, Debug, Default)]
pub struct RaySampleBatch {
    pub t: Vec<f64>,
    pub interp: Vec<InterpResult>,
    pub alpha: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub weight: Vec<f64>,
    pub class: Vec<SampleClass>,
}

impl RaySampleBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn clear(&mut self) {
        self.t.clear();
        self.interp.clear();
        self.alpha.clear();
        self.transmittance.clear();
        self.weight.clear();
        self.class.clear();
    }

    pub fn sdf(&self, i: usize) -> f64 {
        self.interp[i].sdf()
    }

    pub fn radiance(&self, i: usize) -> f64 {
        self.interp[i].radiance()
    }

    /// Evaluates the grid at every depth in `t` (must be sorted).
    pub fn evaluate(&mut self, ray: &Ray, depths: &[f64], grid: &DynamicGrid) {
        self.clear();
        let mut tracer = CachedTracer::new();
        for &t in depths {
            self.t.push(t);
            self.interp.push(tracer.query(&ray.at(t), grid));
        }
    }

    /// Fills alpha, transmittance and weights and composites the ray.
    pub fn composite(&mut self, b: f64) -> Composite {
        let n = self.len();
        self.alpha.clear();
        self.transmittance.clear();
        self.weight.clear();
        let mut trans = 1.0;
        let (mut wsum, mut csum, mut dsum) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let a = if i + 1 < n {
                alpha(self.interp[i].sdf(), self.interp[i + 1].sdf(), b)
            } else {
                0.0
            };
            let w = trans * a;
            self.alpha.push(a);
            self.transmittance.push(trans);
            self.weight.push(w);
            wsum += w;
            csum += w * self.interp[i].radiance();
            dsum += w * self.t[i];
            trans *= 1.0 - a;
        }
        if wsum < NO_SURFACE_EPS {
            Composite {
                color: None,
                depth: None,
                weight_sum: wsum,
            }
        } else {
            Composite {
                color: Some(csum / wsum),
                depth: Some(dsum / wsum),
                weight_sum: wsum,
            }
        }
    }

    /// Reverse-mode pass of [`composite`](Self::composite) for an upstream
    /// gradient `d_color = ∂L/∂R`. Writes `∂L/∂s_i` and `∂L/∂r_i` into the
    /// output buffers and returns `∂L/∂b`. A no-surface ray gets all-zero
    /// gradients.
    pub fn backward(
        &self,
        fwd: &Composite,
        d_color: f64,
        b: f64,
        d_sdf: &mut Vec<f64>,
        d_radiance: &mut Vec<f64>,
    ) -> f64 {
        let n = self.len();
        d_sdf.clear();
        d_sdf.resize(n, 0.0);
        d_radiance.clear();
        d_radiance.resize(n, 0.0);
        let Some(color) = fwd.color else {
            return 0.0;
        };
        let wsum = fwd.weight_sum;
        for i in 0..n {
            d_radiance[i] = d_color * self.weight[i] / wsum;
        }
        // g_i = ∂R/∂w_i, tail = Σ_{i>k} g_i α_i Π_{k<j<i}(1 − α_j)
        let mut d_b = 0.0;
        let mut tail = 0.0;
        for k in (0..n).rev() {
            let g = (self.interp[k].radiance() - color) / wsum;
            if k + 1 < n {
                let d_alpha = d_color * self.transmittance[k] * (g - tail);
                let (ds_i, ds_n, db) = alpha_grad(self.interp[k].sdf(), self.interp[k + 1].sdf(), b);
                d_sdf[k] += d_alpha * ds_i;
                d_sdf[k + 1] += d_alpha * ds_n;
                d_b += d_alpha * db;
            }
            tail = g * self.alpha[k] + (1.0 - self.alpha[k]) * tail;
        }
        d_b
    }
}

/// Output of compositing one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Composite {
    /// Rendered gray value; `None` for a no-surface ray.
    pub color: Option<f64>,
    /// Weighted mean depth, diagnostic only.
    pub depth: Option<f64>,
    pub weight_sum: f64,
}

/// Merges two sorted depth lists.
pub fn merge_sorted(a: &[f64], b: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.reserve(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::MAX_MODALITIES;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Camera {
        Camera {
            fx: 100.0,
            fy: 110.0,
            cx: 80.0,
            cy: 60.0,
            width: 160,
            height: 120,
        }
    }

    fn fake_batch(sdf: &[f64], rad: &[f64]) -> RaySampleBatch {
        let mut b = RaySampleBatch::default();
        for (i, (&s, &r)) in sdf.iter().zip(rad).enumerate() {
            let mut values = [0.0; MAX_MODALITIES];
            values[0] = s;
            values[1] = r;
            b.t.push(0.1 * (i + 1) as f64);
            b.interp.push(InterpResult {
                values,
                dim: 2,
                weights: [0.0; 8],
                nodes: [0; 8],
                row: 0,
            });
        }
        b
    }

    #[test]
    fn center_ray_points_forward() {
        let c = cam();
        let d = c.direction(c.cx, c.cy);
        assert_eq!(d, Vec3::new(0.0, 0.0, 1.0));
        let d = c.direction(c.cx + c.fx, c.cy);
        assert!((d.x / d.z - 1.0).abs() < 1e-12);
        let pose = Matrix4::identity();
        let n = c.pixel_count();
        let pix: Vec<u32> = (0..n as u32).step_by(37).collect();
        let rays = generate_rays(&c, &pose, 0, &vec![0.5; n], &vec![2.0; n], &pix);
        for r in &rays {
            assert!((r.dir.norm() - 1.0).abs() < 1e-12);
            // the observed surface point lies on the z = 2 plane
            assert!((r.at(r.depth).z - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bbox_intersections() {
        let bb = Aabb::new(Vec3::repeat(-1.0), Vec3::repeat(1.0));
        let (t0, t1) = intersect_bbox(&Vec3::zeros(), &Vec3::x(), &bb).unwrap();
        assert_eq!((t0, t1), (0.0, 1.0));
        assert!(intersect_bbox(&Vec3::new(0.0, 2.0, 0.0), &Vec3::x(), &bb).is_none());
        assert!(intersect_bbox(&Vec3::new(3.0, 0.0, 0.0), &Vec3::x(), &bb).is_none());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hits = 0;
        for _ in 0..1000 {
            let o = Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            if let Some((t0, t1)) = intersect_bbox(&o, &d, &bb) {
                hits += 1;
                for (t, clipped) in [(t0, t0 == 0.0), (t1, false)] {
                    if clipped {
                        assert!(bb.contains(&o));
                        continue;
                    }
                    let p = o + t * d;
                    let on_face = (0..3).any(|a| (p[a].abs() - 1.0).abs() < 1e-6);
                    let inside = (0..3).all(|a| p[a].abs() <= 1.0 + 1e-6);
                    assert!(on_face && inside, "{p:?}");
                }
            }
        }
        assert!(hits > 50);
    }

    #[test]
    fn uniform_sampling() {
        let d = sample_uniform::<ChaCha8Rng>(0.0, 1.0, 4, None);
        assert_eq!(d, vec![0.125, 0.375, 0.625, 0.875]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = sample_uniform(2.0, 3.0, 64, Some(&mut rng));
        for (i, t) in d.iter().enumerate() {
            let lo = 2.0 + i as f64 / 64.0;
            assert!(*t >= lo && *t <= lo + 1.0 / 64.0);
        }
        assert!(d.windows(2).all(|w| w[0] < w[1]));
        assert!(sample_uniform::<ChaCha8Rng>(1.0, 1.0, 8, None).is_empty());
    }

    #[test]
    fn importance_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut w = vec![0.0; 16];
        w[5] = 0.3;
        let d = sample_importance(0.0, 1.6, &w, 128, Some(&mut rng));
        assert_eq!(d.len(), 128);
        assert!(d.iter().all(|&t| (0.5..=0.6).contains(&t)), "{d:?}");

        let d = sample_importance(0.0, 1.0, &[0.0; 8], 32, Some(&mut rng));
        assert_eq!(d.len(), 32);

        // uniform weights: chi-square over 10 equal bins
        let mut counts = [0usize; 10];
        let n = 10_000;
        for _ in 0..(n / 100) {
            let d = sample_importance(0.0, 1.0, &[1.0; 32], 100, Some(&mut rng));
            for t in d {
                counts[((t * 10.0) as usize).min(9)] += 1;
            }
        }
        let e = n as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 21.67, "chi2 {chi2}"); // p = 0.01, 9 dof
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha(0.3, 0.3, 10.0), 0.0);
        assert_eq!(alpha(0.1, 0.5, 10.0), 0.0);
        assert!((alpha(1.0, -1.0, 1.0) - 0.632121).abs() < 1e-6);
        // stable for huge arguments
        assert!(alpha(1e4, -1e4, 50.0).is_finite());
        assert!((alpha(-50.0, -60.0, 10.0) - 1.0).abs() < 1e-6);
        // monotone in b on a crossing
        let mut last = 0.0;
        for b in [0.5, 1.0, 2.0, 5.0, 10.0, 40.0] {
            let a = alpha(0.2, -0.1, b);
            assert!(a > last);
            last = a;
        }
    }

    #[test]
    fn composite_cases() {
        let mut b = fake_batch(&[0.5, -0.5], &[0.7, 0.1]);
        let c = b.composite(10.0);
        assert!((c.color.unwrap() - 0.7).abs() < 1e-12);

        let mut b = fake_batch(&[0.9, 0.4, -0.2, -0.6, 0.1], &[0.3; 5]);
        let c = b.composite(10.0);
        assert!((c.color.unwrap() - 0.3).abs() < 1e-12);

        let mut b = fake_batch(&[0.1, 0.2, 0.3], &[0.3; 3]);
        let c = b.composite(10.0);
        assert!(c.color.is_none());
        let (mut ds, mut dr) = (Vec::new(), Vec::new());
        assert_eq!(b.backward(&c, 1.0, 10.0, &mut ds, &mut dr), 0.0);
        assert!(ds.iter().chain(&dr).all(|&g| g == 0.0));
    }

    #[test]
    fn transmittance_telescopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.random_range(2..40);
            let sdf: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut b = fake_batch(&sdf, &vec![0.5; n]);
            b.composite(rng.random_range(1.0..30.0));
            let (mut wsum, mut prod) = (0.0, 1.0);
            for k in 0..n {
                wsum += b.weight[k];
                prod *= 1.0 - b.alpha[k];
                assert!((1.0 - wsum - prod).abs() < 1e-6);
                assert!(b.alpha[k] >= 0.0 && b.alpha[k] <= 1.0);
                if k > 0 {
                    assert!(b.transmittance[k] <= b.transmittance[k - 1]);
                }
            }
            assert_eq!(b.transmittance[0], 1.0);
        }
    }

    #[test]
    fn weight_peaks_at_zero_crossing() {
        // linear SDF crossing zero at t = 0.43
        let t: Vec<f64> = (0..64).map(|i| (i as f64 + 0.5) / 64.0).collect();
        let sdf: Vec<f64> = t.iter().map(|t| (0.43 - t) * 4.0).collect();
        let mut b = fake_batch(&sdf, &vec![0.5; 64]);
        b.composite(20.0);
        let k = (0..64).max_by(|&i, &j| b.weight[i].total_cmp(&b.weight[j])).unwrap();
        assert!(t[k] <= 0.43 && t[k + 1] > 0.43);
    }

    fn render(sdf: &[f64], rad: &[f64], b: f64) -> f64 {
        fake_batch(sdf, rad).composite(b).color.unwrap()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let sdf = [0.8, 0.35, 0.05, -0.3, -0.7];
        let rad = [0.2, 0.9, 0.4, 0.6, 0.1];
        let b = 3.0;
        let mut batch = fake_batch(&sdf, &rad);
        let c = batch.composite(b);
        let (mut ds, mut dr) = (Vec::new(), Vec::new());
        let db = batch.backward(&c, 1.0, b, &mut ds, &mut dr);
        let h = 1e-4;
        let rel = |fd: f64, an: f64| (fd - an).abs() / an.abs().max(1e-6);
        for k in 0..5 {
            let (mut hi, mut lo) = (sdf, sdf);
            hi[k] += h;
            lo[k] -= h;
            let fd = (render(&hi, &rad, b) - render(&lo, &rad, b)) / (2.0 * h);
            assert!(rel(fd, ds[k]) < 1e-3, "sdf {k}: fd {fd} an {}", ds[k]);
            let (mut hi, mut lo) = (rad, rad);
            hi[k] += h;
            lo[k] -= h;
            let fd = (render(&sdf, &hi, b) - render(&sdf, &lo, b)) / (2.0 * h);
            assert!(rel(fd, dr[k]) < 1e-3, "rad {k}: fd {fd} an {}", dr[k]);
        }
        let fd = (render(&sdf, &rad, b + h) - render(&sdf, &rad, b - h)) / (2.0 * h);
        assert!(rel(fd, db) < 1e-3, "b: fd {fd} an {db}");
    }

    #[test]
    fn merge_keeps_order() {
        let mut out = Vec::new();
        merge_sorted(&[0.1, 0.5, 0.9], &[0.2, 0.3, 1.0], &mut out);
        assert_eq!(out, vec![0.1, 0.2, 0.3, 0.5, 0.9, 1.0]);
    }
}
