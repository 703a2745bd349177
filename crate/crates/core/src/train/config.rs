use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// Per-parameter adaptive steps (β = 0.9, 0.99), updated lazily on the
    /// nodes a batch touches.
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubdivisionPolicy {
    /// Near-surface voxels whose mean image or SDF loss exceeds the threshold.
    LossThreshold,
    /// Every near-surface voxel regardless of loss.
    AllSurface,
}

/// Optimization settings. Every field has a default, so a config file only
/// needs the keys it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iters: usize,
    pub rays_per_iter: usize,
    pub coarse_samples: usize,
    pub fine_samples: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// Iteration after which the learning rate is multiplied by the decay
    /// factor (once).
    pub decay_step: usize,
    pub lambda_rgb: f64,
    pub lambda_fs: f64,
    pub lambda_sdf: f64,
    /// Truncation distance in meters; one truncation maps to SDF 1.
    pub truncation: f64,
    /// Iterations after which a subdivision event runs.
    pub subdivision_steps: Vec<usize>,
    pub loss_threshold: f64,
    pub policy: SubdivisionPolicy,
    pub optimizer: OptimizerKind,
    /// Denominator floor of the adaptive optimizer.
    pub adam_eps: f64,
    pub init_sharpness: f64,
    /// Learning rate for `ln b`; 0 freezes the sharpness.
    pub sharpness_lr: f64,
    /// Treat pixels without valid depth as looking through empty space, so
    /// every sample on their rays is supervised as free space. Right for
    /// rendered data where a missing depth means the ray hit nothing; wrong
    /// for sensor dropouts.
    pub invalid_depth_is_free_space: bool,
    /// Random offsets within strata. Off puts samples at stratum midpoints.
    pub jitter: bool,
    pub seed: u64,
    /// Worker threads for the ray phase; 1 runs on the calling thread and 0
    /// uses all cores. Results do not depend on this value.
    pub threads: usize,
    pub log_every: usize,
    /// Random points per subdivision event for the field-continuity check.
    pub continuity_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 60_000,
            rays_per_iter: 2048,
            coarse_samples: 128,
            fine_samples: 128,
            lr: 0.1,
            lr_decay_factor: 0.1,
            decay_step: 20_000,
            lambda_rgb: 2.0,
            lambda_fs: 1.0,
            lambda_sdf: 0.2,
            truncation: 0.05,
            subdivision_steps: vec![20_000, 40_000],
            loss_threshold: 1e-4,
            policy: SubdivisionPolicy::LossThreshold,
            optimizer: OptimizerKind::Adam,
            adam_eps: 1e-8,
            init_sharpness: 10.0,
            sharpness_lr: 1e-4,
            invalid_depth_is_free_space: false,
            jitter: true,
            seed: 0,
            threads: 1,
            log_every: 100,
            continuity_samples: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.iters == 0 || self.rays_per_iter == 0 || self.coarse_samples < 2 {
            return bad("iters and rays_per_iter must be positive and coarse_samples at least 2");
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lr_decay_factor", self.lr_decay_factor),
            ("truncation", self.truncation),
            ("adam_eps", self.adam_eps),
            ("init_sharpness", self.init_sharpness),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("lambda_rgb", self.lambda_rgb),
            ("lambda_fs", self.lambda_fs),
            ("lambda_sdf", self.lambda_sdf),
            ("loss_threshold", self.loss_threshold),
            ("sharpness_lr", self.sharpness_lr),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be nonnegative")));
            }
        }
        if self.subdivision_steps.iter().any(|&s| s == 0 || s >= self.iters) {
            return bad("subdivision steps must lie strictly between 0 and iters");
        }
        if self.subdivision_steps.windows(2).any(|w| w[0] >= w[1]) {
            return bad("subdivision steps must be strictly increasing");
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> super::LossWeights {
        super::LossWeights {
            rgb: self.lambda_rgb,
            fs: self.lambda_fs,
            sdf: self.lambda_sdf,
            truncation: self.truncation,
        }
    }
}
