use crate::field::interpolate_unchecked;
use crate::geom::{Aabb, Vec3};
use crate::grid::DynamicGrid;

/// Scalar samples on a regular lattice of `dims` points spanning `bbox`
/// (both end faces included). Index order is x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledVolume {
    pub bbox: Aabb,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
    /// Lattice points whose value is backed by observations. Cubes touching
    /// an unobserved point produce no triangles.
    pub mask: Option<Vec<bool>>,
}

impl SampledVolume {
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn spacing(&self) -> Vec3 {
        let e = self.bbox.extent();
        Vec3::from_fn(|a, _| e[a] / (self.dims[a] - 1) as f64)
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let s = self.spacing();
        self.bbox.min() + Vec3::new(i as f64 * s.x, j as f64 * s.y, k as f64 * s.z)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn is_valid(&self, i: usize, j: usize, k: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[self.index(i, j, k)])
    }
}

fn lattice(bbox: &Aabb, cells: [u64; 3]) -> ([usize; 3], Vec3, Vec3) {
    let dims = cells.map(|c| c.max(1) as usize + 1);
    let e = bbox.extent();
    let step = Vec3::from_fn(|a, _| e[a] / (dims[a] - 1) as f64);
    (dims, bbox.min(), step)
}

/// Samples the SDF channel of `grid` on a lattice of `cells + 1` points per
/// axis aligned with the grid's bbox; `None` uses the finest resolution.
/// With `masked`, points whose interpolation touches an unobserved node are
/// flagged invalid.
pub fn sample_volume(grid: &DynamicGrid, cells: Option<[u64; 3]>, masked: bool) -> SampledVolume {
    let bbox = *grid.bbox();
    let (dims, origin, step) = lattice(&bbox, cells.unwrap_or_else(|| grid.config().finest_res()));
    let n = dims[0] * dims[1] * dims[2];
    let mut values = Vec::with_capacity(n);
    let mut mask = masked.then(|| Vec::with_capacity(n));
    let nodes = grid.nodes();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = origin + Vec3::new(i as f64 * step.x, j as f64 * step.y, k as f64 * step.z);
                let v = grid.trace_unchecked(&p);
                let r = interpolate_unchecked(&p, &v, nodes);
                values.push(r.sdf());
                if let Some(m) = mask.as_mut() {
                    let ok = (0..8).all(|c| r.weights[c] == 0.0 || nodes.is_observed(r.nodes[c]));
                    m.push(ok);
                }
            }
        }
    }
    SampledVolume {
        bbox,
        dims,
        values,
        mask,
    }
}

/// Samples an arbitrary scalar function on a `cells + 1` lattice over `bbox`.
pub fn sample_analytic(f: impl Fn(&Vec3) -> f64, bbox: &Aabb, cells: [u64; 3]) -> SampledVolume {
    let (dims, origin, step) = lattice(bbox, cells);
    let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                values.push(f(&(origin + Vec3::new(i as f64 * step.x, j as f64 * step.y, k as f64 * step.z))));
            }
        }
    }
    SampledVolume {
        bbox: *bbox,
        dims,
        values,
        mask: None,
    }
}
