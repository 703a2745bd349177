//! Sample classification and the three-term objective.
//!
//! SDF values are stored in truncation units: a metric distance `d` maps to
//! `d / tr`, so the truncation band becomes `[−1, 1]`. World geometry stays
//! metric.

use serde::{Deserialize, Serialize};

use crate::field::GradBuffer;
use crate::grid::DynamicGrid;
use crate::render::{Composite, Ray, RaySampleBatch, SampleClass};

/// Uniform scale applied to distances to obtain stored SDF values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneScale {
    pub truncation: f64,
}

impl SceneScale {
    pub fn new(truncation: f64) -> Self {
        assert!(truncation > 0.0, "truncation must be positive");
        Self { truncation }
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        1.0 / self.truncation
    }

    #[inline]
    pub fn to_scaled(&self, meters: f64) -> f64 {
        meters / self.truncation
    }

    #[inline]
    pub fn to_meters(&self, scaled: f64) -> f64 {
        scaled * self.truncation
    }
}

/// Class of a sample at range `t` on a ray with observed range `depth`.
/// Both ends of the truncation band belong to it.
#[inline]
pub fn classify_sample(t: f64, depth: f64, tr: f64) -> SampleClass {
    if !(depth > 0.0) {
        SampleClass::Unclassified
    } else if (t - depth).abs() <= tr {
        SampleClass::Truncation
    } else if t < depth {
        SampleClass::FreeSpace
    } else {
        SampleClass::Behind
    }
}

/// Truncated, scaled SDF target `clamp((D − t) / tr, −1, 1)`.
#[inline]
pub fn sdf_target(t: f64, depth: f64, tr: f64) -> f64 {
    ((depth - t) / tr).clamp(-1.0, 1.0)
}

/// Mean of `(R − R̂)²` over `(rendered, observed)` pairs.
pub fn loss_rgb(pairs: &[(f64, f64)]) -> f64 {
    mean(pairs.iter().map(|(r, o)| (r - o) * (r - o)), pairs.len())
}

/// Mean over rays of the per-ray mean of `(s − 1)²` over free-space samples.
/// Rays without free-space samples are left out of the outer mean.
pub fn loss_fs(rays: &[Vec<f64>]) -> f64 {
    let per_ray: Vec<f64> = rays
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| mean(s.iter().map(|v| (v - 1.0) * (v - 1.0)), s.len()))
        .collect();
    mean(per_ray.iter().copied(), per_ray.len())
}

/// Mean over rays of the per-ray mean of `(s − ŝ)²` over truncation samples.
pub fn loss_sdf(rays: &[Vec<(f64, f64)>]) -> f64 {
    let per_ray: Vec<f64> = rays
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| mean(s.iter().map(|(v, t)| (v - t) * (v - t)), s.len()))
        .collect();
    mean(per_ray.iter().copied(), per_ray.len())
}

fn mean(it: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        it.sum::<f64>() / n as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rgb: f64,
    pub fs: f64,
    pub sdf: f64,
    pub truncation: f64,
}

impl LossWeights {
    pub fn total(&self, rgb: f64, fs: f64, sdf: f64) -> f64 {
        self.rgb * rgb + self.fs * fs + self.sdf * sdf
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 2.0,
            fs: 1.0,
            sdf: 0.2,
            truncation: 0.05,
        }
    }
}

/// Loss components of one batch and the number of rays behind each mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rgb: f64,
    pub fs: f64,
    pub sdf: f64,
    pub rays_rgb: usize,
    pub rays_fs: usize,
    pub rays_sdf: usize,
}

/// Per-ray contributions before normalization by the batch ray counts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct RayTerms {
    /// `R − R̂` when the ray hit a surface.
    pub residual: Option<f64>,
    /// Mean `(s − 1)²` over free-space samples.
    pub fs: Option<f64>,
    /// Mean `(s − ŝ)²` over truncation samples.
    pub sdf: Option<f64>,
    pub n_fs: usize,
    pub n_sdf: usize,
}

/// Reusable per-ray state for the forward and backward passes.
#[derive(Clone, Debug, Default)]
pub(crate) struct RayWork {
    pub ray: Option<Ray>,
    pub batch: RaySampleBatch,
    pub comp: Option<Composite>,
    pub terms: RayTerms,
    pub d_sdf: Vec<f64>,
    pub d_rad: Vec<f64>,
    pub d_b: f64,
}

impl RayWork {
    /// Evaluates the grid at `depths`, classifies samples and composites.
    pub fn forward(&mut self, ray: &Ray, depths: &[f64], grid: &DynamicGrid, b: f64, tr: f64) {
        self.ray = Some(*ray);
        self.batch.evaluate(ray, depths, grid);
        self.batch.class.clear();
        let mut terms = RayTerms::default();
        let (mut fs, mut sdf) = (0.0, 0.0);
        for i in 0..self.batch.len() {
            let t = self.batch.t[i];
            let class = classify_sample(t, ray.depth, tr);
            let s = self.batch.sdf(i);
            match class {
                SampleClass::FreeSpace => {
                    fs += (s - 1.0) * (s - 1.0);
                    terms.n_fs += 1;
                }
                SampleClass::Truncation => {
                    let r = s - sdf_target(t, ray.depth, tr);
                    sdf += r * r;
                    terms.n_sdf += 1;
                }
                _ => {}
            }
            self.batch.class.push(class);
        }
        let comp = self.batch.composite(b);
        terms.residual = comp.color.map(|c| c - ray.gray);
        terms.fs = (terms.n_fs > 0).then(|| fs / terms.n_fs as f64);
        terms.sdf = (terms.n_sdf > 0).then(|| sdf / terms.n_sdf as f64);
        self.terms = terms;
        self.comp = Some(comp);
    }

    /// Gradients of the batch loss with the given per-term scales
    /// `λ / ray count`.
    pub fn backward(&mut self, scales: &[f64; 3], b: f64, tr: f64) {
        let ray = self.ray.expect("forward before backward");
        let comp = self.comp.expect("forward before backward");
        let d_color = self.terms.residual.map_or(0.0, |r| scales[0] * 2.0 * r);
        self.d_b = self.batch.backward(&comp, d_color, b, &mut self.d_sdf, &mut self.d_rad);
        let c_fs = if self.terms.n_fs > 0 { scales[1] * 2.0 / self.terms.n_fs as f64 } else { 0.0 };
        let c_sdf = if self.terms.n_sdf > 0 { scales[2] * 2.0 / self.terms.n_sdf as f64 } else { 0.0 };
        for i in 0..self.batch.len() {
            let s = self.batch.sdf(i);
            match self.batch.class[i] {
                SampleClass::FreeSpace => self.d_sdf[i] += c_fs * (s - 1.0),
                SampleClass::Truncation => {
                    self.d_sdf[i] += c_sdf * (s - sdf_target(self.batch.t[i], ray.depth, tr))
                }
                _ => {}
            }
        }
    }

    pub fn scatter(&self, grads: &mut GradBuffer) {
        for i in 0..self.batch.len() {
            grads.scatter(&self.batch.interp[i], &[self.d_sdf[i], self.d_rad[i]]);
        }
    }
}

/// Combines per-ray terms into batch means, returning the breakdown and the
/// gradient scales `λ / count` for each term.
pub(crate) fn reduce(terms: impl Iterator<Item = RayTerms>, w: &LossWeights) -> (LossBreakdown, [f64; 3]) {
    let mut out = LossBreakdown::default();
    let (mut rgb, mut fs, mut sdf) = (0.0, 0.0, 0.0);
    for t in terms {
        if let Some(r) = t.residual {
            rgb += r * r;
            out.rays_rgb += 1;
        }
        if let Some(v) = t.fs {
            fs += v;
            out.rays_fs += 1;
        }
        if let Some(v) = t.sdf {
            sdf += v;
            out.rays_sdf += 1;
        }
    }
    let inv = |n: usize| if n > 0 { 1.0 / n as f64 } else { 0.0 };
    out.rgb = rgb * inv(out.rays_rgb);
    out.fs = fs * inv(out.rays_fs);
    out.sdf = sdf * inv(out.rays_sdf);
    out.total = w.total(out.rgb, out.fs, out.sdf);
    let scales = [w.rgb * inv(out.rays_rgb), w.fs * inv(out.rays_fs), w.sdf * inv(out.rays_sdf)];
    (out, scales)
}

/// A ray with fixed sample depths, for evaluating the objective on a
/// reproducible batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenRay {
    pub ray: Ray,
    pub depths: Vec<f64>,
}

/// Objective on a frozen batch.
pub fn frozen_loss(grid: &DynamicGrid, b: f64, rays: &[FrozenRay], w: &LossWeights) -> LossBreakdown {
    let mut work = RayWork::default();
    let terms: Vec<RayTerms> = rays
        .iter()
        .map(|r| {
            work.forward(&r.ray, &r.depths, grid, b, w.truncation);
            work.terms
        })
        .collect();
    reduce(terms.into_iter(), w).0
}

/// Objective and its gradient on a frozen batch. Node gradients are
/// accumulated into `grads` (cleared first); returns `∂L/∂b` alongside.
pub fn frozen_gradient(
    grid: &DynamicGrid,
    b: f64,
    rays: &[FrozenRay],
    w: &LossWeights,
    grads: &mut GradBuffer,
) -> (LossBreakdown, f64) {
    let mut works: Vec<RayWork> = rays
        .iter()
        .map(|r| {
            let mut work = RayWork::default();
            work.forward(&r.ray, &r.depths, grid, b, w.truncation);
            work
        })
        .collect();
    let (loss, scales) = reduce(works.iter().map(|w| w.terms), w);
    grads.resize(grid.nodes().len());
    grads.clear();
    let mut d_b = 0.0;
    for work in &mut works {
        work.backward(&scales, b, w.truncation);
        work.scatter(grads);
        d_b += work.d_b;
    }
    (loss, d_b)
}
