use crate::grid::{DynamicGrid, SDF};

use super::SubdivisionPolicy;

/// Per-voxel-row sums of squared residuals since the last reset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VoxelLossAccumulator {
    image_sum: Vec<f64>,
    image_count: Vec<u32>,
    sdf_sum: Vec<f64>,
    sdf_count: Vec<u32>,
    resets: usize,
}

impl VoxelLossAccumulator {
    pub fn new(rows: usize) -> Self {
        let mut a = Self::default();
        a.reset(rows);
        a.resets = 0;
        a
    }

    /// Clears all statistics and sizes the accumulator for `rows` voxels.
    pub fn reset(&mut self, rows: usize) {
        for v in [&mut self.image_sum, &mut self.sdf_sum] {
            v.clear();
            v.resize(rows, 0.0);
        }
        for v in [&mut self.image_count, &mut self.sdf_count] {
            v.clear();
            v.resize(rows, 0);
        }
        self.resets += 1;
    }

    /// Number of resets since construction.
    pub fn resets(&self) -> usize {
        self.resets
    }

    pub fn rows(&self) -> usize {
        self.image_sum.len()
    }

    #[inline]
    pub fn add_image(&mut self, row: u32, sq: f64) {
        self.image_sum[row as usize] += sq;
        self.image_count[row as usize] += 1;
    }

    #[inline]
    pub fn add_sdf(&mut self, row: u32, sq: f64) {
        self.sdf_sum[row as usize] += sq;
        self.sdf_count[row as usize] += 1;
    }

    pub fn image(&self, row: u32) -> (f64, u32) {
        (self.image_sum[row as usize], self.image_count[row as usize])
    }

    pub fn sdf(&self, row: u32) -> (f64, u32) {
        (self.sdf_sum[row as usize], self.sdf_count[row as usize])
    }

    pub fn mean_image(&self, row: u32) -> Option<f64> {
        let (s, n) = self.image(row);
        (n > 0).then(|| s / n as f64)
    }

    pub fn mean_sdf(&self, row: u32) -> Option<f64> {
        let (s, n) = self.sdf(row);
        (n > 0).then(|| s / n as f64)
    }
}

/// Whether the corner SDF range of a voxel puts it near the surface: the
/// minimum is below 1 and the maximum above 0.
pub fn near_surface(grid: &DynamicGrid, row: u32) -> bool {
    let nodes = grid.nodes();
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &c in grid.voxels().corners(row) {
        let s = nodes.get(c, SDF);
        lo = lo.min(s);
        hi = hi.max(s);
    }
    lo < 1.0 && hi > 0.0
}

/// Active rows to split at a subdivision event, in increasing row order.
/// Rows already at the deepest level are never returned.
pub fn select_subdivision_candidates(
    grid: &DynamicGrid,
    acc: &VoxelLossAccumulator,
    threshold: f64,
    policy: SubdivisionPolicy,
) -> Vec<u32> {
    let max_levels = grid.config().max_levels;
    grid.active_rows()
        .filter(|&row| grid.voxels().level(row) + 1 < max_levels)
        .filter(|&row| near_surface(grid, row))
        .filter(|&row| match policy {
            SubdivisionPolicy::AllSurface => true,
            SubdivisionPolicy::LossThreshold => {
                (row as usize) < acc.rows()
                    && (acc.mean_image(row).is_some_and(|m| m > threshold)
                        || acc.mean_sdf(row).is_some_and(|m| m > threshold))
            }
        })
        .collect()
}
