use std::collections::HashSet;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Mesh;
use crate::geom::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    /// Distance threshold for precision, recall and F-score, meters.
    pub threshold: f64,
    /// Surface samples per square meter.
    pub density: f64,
    /// Cell size of the occupancy grid used for IoU, meters.
    pub iou_cell: f64,
    pub seed: u64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            density: 1e4,
            iou_cell: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshMetrics {
    /// Symmetric mean nearest-neighbor distance, meters.
    pub chamfer: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    /// Mean absolute normal cosine against the nearest neighbor, averaged
    /// over both directions.
    pub normal_consistency: f64,
    /// Intersection over union of surface-occupied cells.
    pub iou: f64,
    pub pred_samples: usize,
    pub gt_samples: usize,
}

impl MeshMetrics {
    fn degenerate(pred_samples: usize, gt_samples: usize) -> Self {
        Self {
            chamfer: f64::INFINITY,
            precision: 0.0,
            recall: 0.0,
            fscore: 0.0,
            normal_consistency: 0.0,
            iou: 0.0,
            pred_samples,
            gt_samples,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

/// Area-uniform random points on `mesh` with barycentric-interpolated
/// vertex normals. At least one point is drawn from a non-empty mesh.
pub fn sample_surface(mesh: &Mesh, density: f64, seed: u64) -> SurfaceSamples {
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut acc = 0.0;
    for f in 0..mesh.faces.len() {
        acc += 0.5 * mesh.face_normal(f).norm();
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return SurfaceSamples::default();
    }
    let n = ((acc * density).ceil() as usize).max(1);
    let vn = mesh.vertex_normals();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SurfaceSamples {
        points: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let u = rng.random::<f64>() * acc;
        let f = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
        let [a, b, c] = mesh.triangle(f);
        let (r1, r2) = (rng.random::<f64>().sqrt(), rng.random::<f64>());
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        out.points.push(wa * a + wb * b + wc * c);
        let [ia, ib, ic] = mesh.faces[f].map(|i| i as usize);
        let mut nrm = wa * vn[ia] + wb * vn[ib] + wc * vn[ic];
        if nrm.norm() < 1e-12 {
            nrm = mesh.face_normal(f);
        }
        out.normals.push(nrm.normalize());
    }
    out
}

struct Nearest {
    dist: Vec<f64>,
    index: Vec<usize>,
}

fn nearest(from: &[Vec3], to: &[Vec3]) -> Nearest {
    let pts: Vec<[f64; 3]> = to.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree = ImmutableKdTree::<f64, 3>::new_from_slice(&pts).expect("kd-tree construction");
    let mut out = Nearest {
        dist: Vec::with_capacity(from.len()),
        index: Vec::with_capacity(from.len()),
    };
    for p in from {
        let nn = tree.query(&[p.x, p.y, p.z]).nearest_one::<SquaredEuclidean<f64>>().execute();
        out.dist.push(nn.distance.sqrt());
        out.index.push(nn.item as usize);
    }
    out
}

fn occupancy(points: &[Vec3], cell: f64) -> HashSet<[i64; 3]> {
    points.iter().map(|p| [0, 1, 2].map(|a| (p[a] / cell).floor() as i64)).collect()
}

/// Compares a reconstructed mesh against ground truth by surface sampling.
/// Both meshes are sampled with the same seed, so the result is symmetric
/// under swapping the arguments and identical meshes compare exactly equal.
/// An empty prediction has infinite chamfer distance and zero scores.
pub fn evaluate(pred: &Mesh, gt: &Mesh, opts: &MetricOptions) -> MeshMetrics {
    let p = sample_surface(pred, opts.density, opts.seed);
    let g = sample_surface(gt, opts.density, opts.seed);
    if p.points.is_empty() || g.points.is_empty() {
        return MeshMetrics::degenerate(p.points.len(), g.points.len());
    }
    let p2g = nearest(&p.points, &g.points);
    let g2p = nearest(&g.points, &p.points);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let frac = |v: &[f64]| v.iter().filter(|&&d| d <= opts.threshold).count() as f64 / v.len() as f64;
    let precision = frac(&p2g.dist);
    let recall = frac(&g2p.dist);
    let fscore = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let nc = |a: &SurfaceSamples, b: &SurfaceSamples, nn: &Nearest| {
        a.normals
            .iter()
            .zip(&nn.index)
            .map(|(n, &j)| n.dot(&b.normals[j]).abs())
            .sum::<f64>()
            / a.normals.len() as f64
    };
    let occ_p = occupancy(&p.points, opts.iou_cell);
    let occ_g = occupancy(&g.points, opts.iou_cell);
    let inter = occ_p.intersection(&occ_g).count() as f64;
    let union = occ_p.union(&occ_g).count() as f64;
    MeshMetrics {
        chamfer: 0.5 * (mean(&p2g.dist) + mean(&g2p.dist)),
        precision,
        recall,
        fscore,
        normal_consistency: 0.5 * (nc(&p, &g, &p2g) + nc(&g, &p, &g2p)),
        iou: inter / union,
        pred_samples: p.points.len(),
        gt_samples: g.points.len(),
    }
}
