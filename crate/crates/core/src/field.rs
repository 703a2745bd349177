//! Trilinear interpolation of node modalities and its backward pass.

use crate::grid::{DynamicGrid, NodeStore, VoxelRef, MAX_MODALITIES, RADIANCE, SDF};
use crate::{Error, Result, Vec3};

/// Interpolated modalities at one point together with what is needed to push
/// gradients back onto the 8 corner nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpResult {
    pub values: [f64; MAX_MODALITIES],
    pub dim: usize,
    pub weights: [f64; 8],
    pub nodes: [u32; 8],
    /// Voxel-table row of the voxel that was interpolated.
    pub row: u32,
}

impl InterpResult {
    #[inline]
    pub fn sdf(&self) -> f64 {
        self.values[SDF]
    }

    #[inline]
    pub fn radiance(&self) -> f64 {
        self.values[RADIANCE]
    }
}

/// Trilinear weights of the corners of `voxel` at local coordinates.
#[inline]
pub fn trilinear_weights(local: [f64; 3]) -> [f64; 8] {
    let [fx, fy, fz] = local;
    let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
    [
        gx * gy * gz,
        fx * gy * gz,
        gx * fy * gz,
        fx * fy * gz,
        gx * gy * fz,
        fx * gy * fz,
        gx * fy * fz,
        fx * fy * fz,
    ]
}

#[inline]
fn local_coords(x: &Vec3, voxel: &VoxelRef) -> [f64; 3] {
    let mut l = [0.0; 3];
    for (a, v) in l.iter_mut().enumerate() {
        *v = ((x[a] - voxel.min[a]) / voxel.size[a]).clamp(0.0, 1.0);
    }
    l
}

/// Interpolates all modalities of `store` at `x` inside `voxel`.
pub fn interpolate(x: &Vec3, voxel: &VoxelRef, store: &NodeStore) -> Result<InterpResult> {
    if !voxel.contains(x) {
        return Err(Error::Precondition(format!(
            "point {x:?} outside voxel row {}",
            voxel.row
        )));
    }
    Ok(interpolate_unchecked(x, voxel, store))
}

/// [`interpolate`] without the containment check; local coordinates are
/// clamped into the cell.
#[inline]
pub fn interpolate_unchecked(x: &Vec3, voxel: &VoxelRef, store: &NodeStore) -> InterpResult {
    let weights = trilinear_weights(local_coords(x, voxel));
    let dim = store.dim();
    let mut values = [0.0; MAX_MODALITIES];
    for (w, &n) in weights.iter().zip(&voxel.corners) {
        let row = store.row(n);
        for (v, &s) in values.iter_mut().zip(row) {
            *v += w * s as f64;
        }
    }
    InterpResult {
        values,
        dim,
        weights,
        nodes: voxel.corners,
        row: voxel.row,
    }
}

/// Per-corner gradients `w_i · upstream` of an interpolation.
pub fn interpolate_backward(upstream: &[f64], weights: &[f64; 8]) -> [[f64; MAX_MODALITIES]; 8] {
    let mut out = [[0.0; MAX_MODALITIES]; 8];
    for (o, &w) in out.iter_mut().zip(weights) {
        for (g, &u) in o.iter_mut().zip(upstream) {
            *g = w * u;
        }
    }
    out
}

/// Trace followed by interpolation. Returns `(sdf, radiance)`.
pub fn query(x: &Vec3, grid: &DynamicGrid) -> Result<(f64, f64)> {
    let v = grid.trace(x)?;
    let r = interpolate_unchecked(x, &v, grid.nodes());
    Ok((r.sdf(), r.radiance()))
}

/// Full interpolation result at a world point.
pub fn query_full(x: &Vec3, grid: &DynamicGrid) -> Result<InterpResult> {
    let v = grid.trace(x)?;
    Ok(interpolate_unchecked(x, &v, grid.nodes()))
}

/// Tracing with a one-voxel cache: consecutive samples along a ray usually
/// fall into the same terminal voxel.
#[derive(Debug, Default)]
pub struct CachedTracer {
    last: Option<VoxelRef>,
}

impl CachedTracer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Like [`query_full`] for points already known to lie in the box. The
    /// cache must not outlive a structural change of the grid.
    #[inline]
    pub fn query(&mut self, x: &Vec3, grid: &DynamicGrid) -> InterpResult {
        let voxel = match self.last {
            Some(v) if strictly_inside(&v, x) => v,
            _ => {
                let v = grid.trace_unchecked(x);
                self.last = Some(v);
                v
            }
        };
        interpolate_unchecked(x, &voxel, grid.nodes())
    }
}

// Half-open on the upper faces so the cached answer agrees with the
// upper-cell convention of `trace`.
#[inline]
fn strictly_inside(v: &VoxelRef, x: &Vec3) -> bool {
    (0..3).all(|a| x[a] >= v.min[a] && x[a] < v.min[a] + v.size[a])
}

/// Dense gradient buffer over node ids with a list of touched nodes, so that
/// clearing and stepping cost is proportional to what a batch touched.
#[derive(Clone, Debug)]
pub struct GradBuffer {
    dim: usize,
    grads: Vec<f64>,
    stamp: Vec<u32>,
    epoch: u32,
    touched: Vec<u32>,
}

impl GradBuffer {
    pub fn new(dim: usize, node_count: usize) -> Self {
        Self {
            dim,
            grads: vec![0.0; dim * node_count],
            stamp: vec![0; node_count],
            epoch: 1,
            touched: Vec::new(),
        }
    }

    /// Grows the buffer to cover newly appended nodes.
    pub fn resize(&mut self, node_count: usize) {
        if node_count > self.stamp.len() {
            self.grads.resize(self.dim * node_count, 0.0);
            self.stamp.resize(node_count, 0);
        }
    }

    #[inline]
    pub fn add(&mut self, node: u32, channel: usize, g: f64) {
        let n = node as usize;
        if self.stamp[n] != self.epoch {
            self.stamp[n] = self.epoch;
            self.touched.push(node);
            let s = n * self.dim;
            self.grads[s..s + self.dim].iter_mut().for_each(|v| *v = 0.0);
        }
        self.grads[n * self.dim + channel] += g;
    }

    /// Scatters an upstream modality gradient through interpolation weights.
    #[inline]
    pub fn scatter(&mut self, interp: &InterpResult, upstream: &[f64]) {
        for (&n, &w) in interp.nodes.iter().zip(&interp.weights) {
            for (ch, &u) in upstream.iter().enumerate() {
                if u != 0.0 {
                    self.add(n, ch, w * u);
                }
            }
        }
    }

    #[inline]
    pub fn get(&self, node: u32, channel: usize) -> f64 {
        let n = node as usize;
        if self.stamp[n] == self.epoch {
            self.grads[n * self.dim + channel]
        } else {
            0.0
        }
    }

    pub fn touched(&self) -> &[u32] {
        &self.touched
    }

    pub fn clear(&mut self) {
        self.touched.clear();
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
    }
}
