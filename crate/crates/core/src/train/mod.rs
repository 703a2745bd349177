//! Losses, per-voxel loss bookkeeping, subdivision and the optimization loop.

mod config;
mod loss;
mod optim;
mod partition;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{query_full, GradBuffer};
use crate::geom::Vec3;
use crate::grid::DynamicGrid;
use crate::render::{
    intersect_bbox, make_ray, merge_sorted, pose_origin, sample_importance_into, sample_uniform_into,
    Ray, SampleClass, Sharpness,
};
use crate::scene_io::Dataset;
use crate::{Error, Result};

pub use config::{OptimizerKind, SubdivisionPolicy, TrainConfig};
pub use loss::{
    classify_sample, frozen_gradient, frozen_loss, loss_fs, loss_rgb, loss_sdf, sdf_target, FrozenRay,
    LossBreakdown, LossWeights, SceneScale,
};
pub use optim::{NodeOptimizer, ScalarAdam};
pub use partition::{near_surface, select_subdivision_candidates, VoxelLossAccumulator};

use loss::{reduce, RayWork};

/// Attempts per ray at drawing a pixel whose ray meets the bounding box.
const MAX_RAY_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub loss: LossBreakdown,
    pub active_voxels: usize,
    pub nodes: usize,
    pub lr: f64,
    pub sharpness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubdivisionEvent {
    pub iter: usize,
    /// Rows returned by candidate selection.
    pub candidates: usize,
    /// Rows actually split.
    pub split: usize,
    pub new_nodes: usize,
    pub active_before: usize,
    pub active_after: usize,
    /// Largest change of any interpolated modality at random points inside
    /// the split voxels, comparing right before and right after the split.
    pub max_field_change: f64,
    pub probes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<IterRecord>,
    pub subdivisions: Vec<SubdivisionEvent>,
}

impl History {
    pub fn last(&self) -> Option<&IterRecord> {
        self.records.last()
    }
}

pub struct TrainOutcome {
    pub grid: DynamicGrid,
    pub sharpness: Sharpness,
    pub history: History,
}

fn ray_seed(seed: u64, iter: usize, ray: usize) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ (iter as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (ray as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scratch buffers for drawing sample depths on one ray.
#[derive(Default)]
struct SampleScratch {
    coarse: Vec<f64>,
    fine: Vec<f64>,
    merged: Vec<f64>,
    cdf: Vec<f64>,
    probe: RayWork,
}

/// Training state. [`Trainer::step`] runs one iteration; [`Trainer::run`]
/// runs the remaining schedule.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Dataset,
    grid: DynamicGrid,
    sharpness: Sharpness,
    sharpness_opt: ScalarAdam,
    opt: NodeOptimizer,
    grads: GradBuffer,
    acc: VoxelLossAccumulator,
    rng: ChaCha8Rng,
    iter: usize,
    lr: f64,
    sharpness_lr: f64,
    history: History,
    pool: Option<rayon::ThreadPool>,
    works: Vec<RayWork>,
    scratch: Vec<SampleScratch>,
    rays: Vec<Ray>,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a Dataset, grid: DynamicGrid, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        if grid.nodes().dim() != 2 {
            return Err(Error::Precondition("training needs a grid with SDF and gray radiance channels".into()));
        }
        let pool = match cfg.threads {
            1 => None,
            n => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            ),
        };
        let nodes = grid.nodes().len();
        let rows = grid.voxels().len();
        Ok(Self {
            sharpness: Sharpness::new(cfg.init_sharpness),
            sharpness_opt: ScalarAdam::default(),
            opt: NodeOptimizer::with_eps(cfg.optimizer, 2, nodes, cfg.adam_eps),
            grads: GradBuffer::new(2, nodes),
            acc: VoxelLossAccumulator::new(rows),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            iter: 0,
            lr: cfg.lr,
            sharpness_lr: cfg.sharpness_lr,
            history: History::default(),
            pool,
            works: Vec::new(),
            scratch: Vec::new(),
            rays: Vec::new(),
            cfg,
            data,
            grid,
        })
    }

    pub fn grid(&self) -> &DynamicGrid {
        &self.grid
    }

    pub fn sharpness(&self) -> Sharpness {
        self.sharpness
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn accumulator(&self) -> &VoxelLossAccumulator {
        &self.acc
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    fn draw_rays(&mut self) -> Result<()> {
        let cam = &self.data.camera;
        let bbox = *self.grid.bbox();
        let frames = self.data.frames.len();
        let pixels = cam.pixel_count() as u32;
        self.rays.clear();
        for _ in 0..self.cfg.rays_per_iter {
            let mut found = None;
            for _ in 0..MAX_RAY_ATTEMPTS {
                let f = &self.data.frames[self.rng.random_range(0..frames)];
                let p = self.rng.random_range(0..pixels);
                let mut ray = make_ray(cam, &f.pose, &pose_origin(&f.pose), f.id, &f.gray, &f.depth, p);
                if self.cfg.invalid_depth_is_free_space && ray.depth == 0.0 {
                    // every sample then lies in front of the observed surface
                    ray.depth = f64::INFINITY;
                }
                if intersect_bbox(&ray.origin, &ray.dir, &bbox).is_some_and(|(a, b)| b - a > 0.0) {
                    found = Some(ray);
                    break;
                }
            }
            match found {
                Some(r) => self.rays.push(r),
                None => return Err(Error::Precondition("no camera ray meets the bounding box".into())),
            }
        }
        Ok(())
    }

    /// One optimization iteration. Subdivision and learning-rate decay
    /// scheduled for this iteration run after the gradient step.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        self.iter += 1;
        self.draw_rays()?;
        let n = self.rays.len();
        self.works.resize_with(n, RayWork::default);
        let threads = self.pool.as_ref().map_or(1, |p| p.current_num_threads()).max(1);
        self.scratch.resize_with(threads, SampleScratch::default);

        let b = self.sharpness.b();
        let tr = self.cfg.truncation;
        let (grid, cfg, rays, iter) = (&self.grid, &self.cfg, &self.rays, self.iter);
        let chunk = n.div_ceil(threads);
        let forward = |(ci, (works, scratch)): (usize, (&mut [RayWork], &mut SampleScratch))| {
            for (k, work) in works.iter_mut().enumerate() {
                let idx = ci * chunk + k;
                let ray = &rays[idx];
                let mut rng = cfg.jitter.then(|| ChaCha8Rng::seed_from_u64(ray_seed(cfg.seed, iter, idx)));
                sample_depths(grid, ray, cfg, b, rng.as_mut(), scratch);
                work.forward(ray, &scratch.merged, grid, b, tr);
            }
        };
        match &self.pool {
            Some(pool) => pool.install(|| {
                self.works
                    .par_chunks_mut(chunk)
                    .zip(self.scratch.par_iter_mut())
                    .enumerate()
                    .for_each(forward)
            }),
            None => self
                .works
                .chunks_mut(chunk)
                .zip(self.scratch.iter_mut())
                .enumerate()
                .for_each(forward),
        }

        let weights = self.cfg.loss_weights();
        let (loss, scales) = reduce(self.works.iter().map(|w| w.terms), &weights);
        if !loss.total.is_finite() {
            return Err(Error::Numerical {
                iter: self.iter,
                msg: format!(
                    "loss {:?} (rgb {}, fs {}, sdf {}), sharpness {}, lr {}, {} nodes",
                    loss.total, loss.rgb, loss.fs, loss.sdf, b, self.lr, self.grid.nodes().len()
                ),
            });
        }

        let backward = |w: &mut RayWork| w.backward(&scales, b, tr);
        match &self.pool {
            Some(pool) => pool.install(|| self.works.par_iter_mut().for_each(backward)),
            None => self.works.iter_mut().for_each(backward),
        }

        // sequential merge in ray order keeps results independent of threads
        self.grads.resize(self.grid.nodes().len());
        self.grads.clear();
        let mut d_b = 0.0;
        for work in &self.works {
            work.scatter(&mut self.grads);
            d_b += work.d_b;
            let img = work.terms.residual.map(|r| r * r);
            let ray = work.ray.as_ref().expect("forward ran");
            let nodes = self.grid.nodes_mut();
            for i in 0..work.batch.len() {
                let interp = &work.batch.interp[i];
                if let Some(sq) = img {
                    self.acc.add_image(interp.row, sq);
                }
                match work.batch.class[i] {
                    SampleClass::Truncation => {
                        let r = interp.sdf() - sdf_target(work.batch.t[i], ray.depth, tr);
                        self.acc.add_sdf(interp.row, r * r);
                        for &c in &interp.nodes {
                            nodes.mark_observed(c);
                        }
                    }
                    SampleClass::FreeSpace => {
                        for &c in &interp.nodes {
                            nodes.mark_observed(c);
                        }
                    }
                    _ => {}
                }
            }
        }

        self.opt.step(self.grid.nodes_mut(), &self.grads, self.lr);
        if self.sharpness_lr > 0.0 && d_b != 0.0 {
            // chain rule through b = exp(log b)
            self.sharpness_opt.step(&mut self.sharpness.log_b, d_b * b, self.sharpness_lr);
        }

        let record_now = self.cfg.log_every > 0 && self.iter % self.cfg.log_every == 0;
        if record_now || self.iter == self.cfg.iters {
            self.history.records.push(IterRecord {
                iter: self.iter,
                loss,
                active_voxels: self.grid.active_rows().count(),
                nodes: self.grid.nodes().len(),
                lr: self.lr,
                sharpness: self.sharpness.b(),
            });
        }
        if self.cfg.subdivision_steps.contains(&self.iter) {
            self.subdivide_now();
        }
        if self.iter == self.cfg.decay_step {
            self.lr *= self.cfg.lr_decay_factor;
            self.sharpness_lr *= self.cfg.lr_decay_factor;
        }
        Ok(loss)
    }

    /// Selects candidates from the accumulated losses, splits them, checks
    /// field continuity and resets the accumulator.
    pub fn subdivide_now(&mut self) -> SubdivisionEvent {
        let candidates = select_subdivision_candidates(&self.grid, &self.acc, self.cfg.loss_threshold, self.cfg.policy);
        let active_before = self.grid.active_rows().count();
        let mut rng = ChaCha8Rng::seed_from_u64(ray_seed(self.cfg.seed ^ 0x5eed, self.iter, usize::MAX));
        let probes: Vec<Vec3> = if candidates.is_empty() {
            Vec::new()
        } else {
            (0..self.cfg.continuity_samples)
                .map(|_| {
                    let v = self.grid.voxel_ref(candidates[rng.random_range(0..candidates.len())]);
                    v.min + Vec3::from_fn(|a, _| rng.random::<f64>() * v.size[a])
                })
                .collect()
        };
        let before: Vec<[f64; 2]> = probes.iter().map(|p| modalities(&self.grid, p)).collect();
        let report = self.grid.subdivide(&candidates);
        let max_field_change = probes
            .iter()
            .zip(&before)
            .map(|(p, b)| {
                let a = modalities(&self.grid, p);
                (a[0] - b[0]).abs().max((a[1] - b[1]).abs())
            })
            .fold(0.0, f64::max);
        let nodes = self.grid.nodes().len();
        self.grads.resize(nodes);
        self.opt.resize(nodes);
        self.acc.reset(self.grid.voxels().len());
        // Evidence gathered at a coarser level marks nodes far behind the
        // surface whose values were never constrained; only samples taken at
        // the new resolution count toward the extraction mask.
        self.grid.nodes_mut().clear_observed();
        let event = SubdivisionEvent {
            iter: self.iter,
            candidates: candidates.len(),
            split: report.deactivated.len(),
            new_nodes: report.new_nodes.len(),
            active_before,
            active_after: self.grid.active_rows().count(),
            max_field_change,
            probes: probes.len(),
        };
        log::info!(
            "subdivision at iter {}: split {} of {} active voxels, +{} nodes, max field change {:.3e}",
            event.iter,
            event.split,
            active_before,
            event.new_nodes,
            max_field_change
        );
        self.history.subdivisions.push(event.clone());
        event
    }

    /// Runs until `iters`, writing one line per history record to `log`.
    pub fn run(mut self, mut log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
        while self.iter < self.cfg.iters {
            self.step()?;
            if let (Some(w), Some(rec)) = (log.as_deref_mut(), self.history.records.last()) {
                if rec.iter == self.iter {
                    writeln!(w, "{}", format_record(rec))?;
                }
            }
            if let (Some(w), Some(ev)) = (log.as_deref_mut(), self.history.subdivisions.last()) {
                if ev.iter == self.iter {
                    writeln!(
                        w,
                        "subdivide iter={} candidates={} split={} new_nodes={} active={} max_field_change={:e}",
                        ev.iter, ev.candidates, ev.split, ev.new_nodes, ev.active_after, ev.max_field_change
                    )?;
                }
            }
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            grid: self.grid,
            sharpness: self.sharpness,
            history: self.history,
        }
    }
}

fn modalities(grid: &DynamicGrid, p: &Vec3) -> [f64; 2] {
    match query_full(p, grid) {
        Ok(r) => [r.sdf(), r.radiance()],
        Err(_) => [f64::NAN; 2],
    }
}

/// Coarse stratified depths over the box chord plus importance samples
/// drawn from the coarse rendering weights, merged into `scratch.merged`.
fn sample_depths(
    grid: &DynamicGrid,
    ray: &Ray,
    cfg: &TrainConfig,
    b: f64,
    mut rng: Option<&mut ChaCha8Rng>,
    s: &mut SampleScratch,
) {
    let (t0, t1) = intersect_bbox(&ray.origin, &ray.dir, grid.bbox()).unwrap_or((0.0, 0.0));
    sample_uniform_into(t0, t1, cfg.coarse_samples, rng.as_deref_mut(), &mut s.coarse);
    if cfg.fine_samples == 0 || s.coarse.is_empty() {
        s.merged.clear();
        s.merged.extend_from_slice(&s.coarse);
        return;
    }
    s.probe.batch.evaluate(ray, &s.coarse, grid);
    s.probe.batch.composite(b);
    sample_importance_into(t0, t1, &s.probe.batch.weight, cfg.fine_samples, rng, &mut s.cdf, &mut s.fine);
    merge_sorted(&s.coarse, &s.fine, &mut s.merged);
}

/// Log line for one history record.
pub fn format_record(r: &IterRecord) -> String {
    format!(
        "iter={} loss={:.6e} rgb={:.6e} fs={:.6e} sdf={:.6e} rays_rgb={} voxels={} nodes={} lr={:e} b={:.4}",
        r.iter, r.loss.total, r.loss.rgb, r.loss.fs, r.loss.sdf, r.loss.rays_rgb, r.active_voxels, r.nodes, r.lr, r.sharpness
    )
}

/// Trains `grid` on `dataset` for the full schedule of `cfg`.
pub fn train(dataset: &Dataset, grid: DynamicGrid, cfg: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(dataset, grid, cfg.clone())?.run(None)
}
