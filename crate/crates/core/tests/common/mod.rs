//! Checks shared by the property tests and the acceptance suite. Each check
//! is driven by a seed and reports the first violation it finds.
#![allow(dead_code)]

use dynvox::field::{interpolate_unchecked, query, trilinear_weights};
use dynvox::grid::{decode_key, encode_key, SDF, RADIANCE};
use dynvox::render::{RaySampleBatch, Ray};
use dynvox::{Aabb, DynamicGrid, GridConfig, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every cell of every level for base resolutions up to 16 per axis.
pub fn keys_exhaustive() -> Check {
    for res in [[1, 1, 1], [2, 3, 4], [16, 16, 16], [5, 16, 7]] {
        for level in 0..2u32 {
            let d = res.map(|r| (r as u64) << level);
            for z in 0..d[2] {
                for y in 0..d[1] {
                    for x in 0..d[0] {
                        let key = encode_key(level, [x, y, z], res).map_err(|e| e.to_string())?;
                        let back = decode_key(level, key, res).map_err(|e| e.to_string())?;
                        if back != [x, y, z] {
                            return Err(format!("res {res:?} level {level}: {:?} -> {key} -> {back:?}", [x, y, z]));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn keys_random(seed: u64, samples: usize) -> Check {
    let mut r = rng(seed);
    for _ in 0..samples {
        let res = [0; 3].map(|_| r.random_range(17..200u32));
        let level = r.random_range(0..8u32);
        let cell = res.map(|v| r.random_range(0..(v as u64) << level));
        let key = encode_key(level, cell, res).map_err(|e| e.to_string())?;
        if decode_key(level, key, res).map_err(|e| e.to_string())? != cell {
            return Err(format!("res {res:?} level {level} cell {cell:?}"));
        }
    }
    Ok(())
}

/// Grid with a random base resolution, depth and split pattern.
pub fn random_grid(r: &mut ChaCha8Rng) -> DynamicGrid {
    let res = [0; 3].map(|_| r.random_range(2..5u32));
    let levels = r.random_range(2..5u32);
    let min = Vec3::from_fn(|_, _| r.random_range(-2.0..2.0));
    let ext = Vec3::from_fn(|_, _| r.random_range(0.5..3.0));
    let mut g = DynamicGrid::new(GridConfig::new(Aabb::new(min, min + ext), res, levels)).unwrap();
    for _ in 1..levels {
        let active: Vec<u32> = g.active_rows().collect();
        let pick: Vec<u32> = active.into_iter().filter(|_| r.random_bool(0.4)).collect();
        g.subdivide(&pick);
    }
    g
}

fn random_point(r: &mut ChaCha8Rng, b: &Aabb) -> Vec3 {
    b.min() + Vec3::from_fn(|a, _| r.random::<f64>() * b.extent()[a])
}

/// The traced voxel is the only active voxel containing the point under the
/// half-open cell convention.
pub fn trace_matches_brute_force(seed: u64, points: usize) -> Check {
    let mut r = rng(seed);
    let g = random_grid(&mut r);
    g.check_integrity()?;
    let rows: Vec<u32> = g.active_rows().collect();
    for _ in 0..points {
        let x = random_point(&mut r, g.bbox());
        let hits: Vec<u32> = rows
            .iter()
            .copied()
            .filter(|&row| {
                let v = g.voxel_ref(row);
                (0..3).all(|a| x[a] >= v.min[a] && x[a] < v.min[a] + v.size[a])
            })
            .collect();
        let traced = g.trace(&x).map_err(|e| e.to_string())?;
        if hits != [traced.row] {
            return Err(format!("seed {seed}: point {x:?} traced to {} but contained in {hits:?}", traced.row));
        }
    }
    Ok(())
}

/// Node values set to an affine function before splitting are reproduced by
/// interpolation everywhere, including inside split voxels.
pub fn affine_reproduction(seed: u64, points: usize, tol: f64) -> Check {
    let mut r = rng(seed);
    let coef: [[f64; 4]; 2] = [0; 2].map(|_| [0; 4].map(|_| r.random_range(-0.2..0.2)));
    let f = |c: &[f64; 4], p: &Vec3| c[0] + c[1] * p.x + c[2] * p.y + c[3] * p.z;
    let res = [0; 3].map(|_| r.random_range(2..5u32));
    let min = Vec3::from_fn(|_, _| r.random_range(-1.0..1.0));
    let ext = Vec3::from_fn(|_, _| r.random_range(0.5..2.0));
    let mut g = DynamicGrid::new(GridConfig::new(Aabb::new(min, min + ext), res, 3)).unwrap();
    let rows: Vec<u32> = g.active_rows().collect();
    for &row in &rows {
        let v = g.voxel_ref(row);
        for i in 0..8 {
            let p = v.corner_position(i);
            g.nodes_mut().set(v.corners[i], SDF, f(&coef[0], &p) as f32);
            g.nodes_mut().set(v.corners[i], RADIANCE, f(&coef[1], &p) as f32);
        }
    }
    for _ in 1..3 {
        let active: Vec<u32> = g.active_rows().collect();
        let pick: Vec<u32> = active.into_iter().filter(|_| r.random_bool(0.5)).collect();
        g.subdivide(&pick);
    }
    for _ in 0..points {
        let x = random_point(&mut r, g.bbox());
        let (s, c) = query(&x, &g).map_err(|e| e.to_string())?;
        let (es, ec) = (f(&coef[0], &x), f(&coef[1], &x));
        if (s - es).abs() > tol || (c - ec).abs() > tol {
            return Err(format!("seed {seed}: at {x:?} got ({s}, {c}) expected ({es}, {ec})"));
        }
    }
    Ok(())
}

pub fn trilinear_partition_of_unity(seed: u64, points: usize) -> Check {
    let mut r = rng(seed);
    for _ in 0..points {
        let l = [0; 3].map(|_| r.random::<f64>());
        let w = trilinear_weights(l);
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-12 || w.iter().any(|&v| v < 0.0) {
            return Err(format!("weights {w:?} at {l:?}"));
        }
    }
    Ok(())
}

/// Random ray through a random grid with random node values.
pub fn random_ray_batch(r: &mut ChaCha8Rng, samples: usize) -> (RaySampleBatch, f64) {
    let mut g = random_grid(r);
    for v in g.nodes_mut().values_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    let b = g.bbox();
    let (lo, hi) = (b.min(), b.max());
    let origin = lo - Vec3::repeat(0.5);
    let target = lo + (hi - lo).component_mul(&Vec3::from_fn(|_, _| r.random_range(0.3..0.9)));
    let dir = (target - origin).normalize();
    let ray = Ray { origin, dir, pixel: 0, frame: 0, gray: 0.5, depth: 1.0 };
    let (t0, t1) = dynvox::render::intersect_bbox(&origin, &dir, b).expect("ray aims into the box");
    let mut t: Vec<f64> = (0..samples).map(|_| r.random_range(t0..t1)).collect();
    t.sort_by(f64::total_cmp);
    let mut batch = RaySampleBatch::default();
    batch.evaluate(&ray, &t, &g);
    (batch, r.random_range(0.5..50.0))
}

/// Compositing weights are non-negative, sum to at most one and together
/// with the final transmittance telescope to exactly one.
pub fn compositing_identities(seed: u64, tol: f64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(2..64);
    let (mut batch, b) = random_ray_batch(&mut r, n);
    batch.composite(b);
    let wsum: f64 = batch.weight.iter().sum();
    let last = n - 1;
    let t_end = batch.transmittance[last] * (1.0 - batch.alpha[last]);
    if batch.weight.iter().any(|&w| w < 0.0) || wsum > 1.0 + tol {
        return Err(format!("seed {seed}: weights sum {wsum}"));
    }
    if (wsum + t_end - 1.0).abs() > tol {
        return Err(format!("seed {seed}: Σw + T_end = {}", wsum + t_end));
    }
    for i in 0..n {
        let expect: f64 = batch.alpha[..i].iter().map(|a| 1.0 - a).product();
        if (batch.transmittance[i] - expect).abs() > tol {
            return Err(format!("seed {seed}: T[{i}] = {} but product is {expect}", batch.transmittance[i]));
        }
    }
    Ok(())
}

/// Splitting voxels leaves every interpolated modality unchanged.
pub fn subdivision_continuity(seed: u64, points: usize, tol: f64) -> Check {
    let mut r = rng(seed);
    let res = [0; 3].map(|_| r.random_range(2..5u32));
    let mut g = DynamicGrid::new(GridConfig::new(Aabb::new(Vec3::zeros(), Vec3::repeat(1.0)), res, 4)).unwrap();
    for v in g.nodes_mut().values_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    for _ in 0..3 {
        let probes: Vec<Vec3> = (0..points).map(|_| random_point(&mut r, g.bbox())).collect();
        let before: Vec<_> = probes.iter().map(|p| query(p, &g).unwrap()).collect();
        let active: Vec<u32> = g.active_rows().collect();
        let pick: Vec<u32> = active.into_iter().filter(|_| r.random_bool(0.5)).collect();
        g.subdivide(&pick);
        for (p, b) in probes.iter().zip(&before) {
            let a = query(p, &g).unwrap();
            if (a.0 - b.0).abs() > tol || (a.1 - b.1).abs() > tol {
                return Err(format!("seed {seed}: {p:?} changed {b:?} -> {a:?}"));
            }
        }
    }
    Ok(())
}

/// Interpolation inside one voxel for direct use by tests.
pub fn interp_at(g: &DynamicGrid, x: &Vec3) -> f64 {
    interpolate_unchecked(x, &g.trace_unchecked(x), g.nodes()).sdf()
}

/// Worst relative error of the analytic gradient against central finite
/// differences, per parameter group.
#[derive(Debug, Clone, Copy)]
pub struct GradientCheck {
    pub sdf: f64,
    pub radiance: f64,
    pub sharpness: f64,
    pub params: usize,
}

/// Toy problem: 2 rays × 8 samples through an 8³ grid whose SDF falls along
/// the viewing direction, so every interval has positive opacity and the
/// samples cover free space, the truncation band and the space behind it.
pub fn gradient_oracle(seed: u64) -> GradientCheck {
    use dynvox::field::GradBuffer;
    use dynvox::train::{frozen_gradient, frozen_loss, FrozenRay, LossWeights};
    let mut r = rng(seed);
    let mut g = DynamicGrid::new(GridConfig::new(Aabb::new(Vec3::zeros(), Vec3::repeat(1.0)), [8; 3], 1)).unwrap();
    let rows: Vec<u32> = g.active_rows().collect();
    for row in rows {
        let v = g.voxel_ref(row);
        for i in 0..8 {
            let p = v.corner_position(i);
            let s = 0.9 - 1.6 * p.z + r.random_range(-0.03..0.03);
            g.nodes_mut().set(v.corners[i], SDF, s as f32);
            g.nodes_mut().set(v.corners[i], RADIANCE, r.random_range(0.1..0.9) as f32);
        }
    }
    let w = LossWeights { rgb: 2.0, fs: 1.0, sdf: 0.2, truncation: 0.15 };
    let rays: Vec<FrozenRay> = (0..2)
        .map(|k| {
            let origin = Vec3::new(0.3 + 0.35 * k as f64, 0.4 + 0.1 * k as f64, 0.0);
            let dir = Vec3::new(0.05, -0.03, 1.0).normalize();
            let ray = Ray { origin, dir, pixel: k, frame: 0, gray: 0.3 + 0.4 * k as f64, depth: 0.58 };
            // midpoints keep every sample away from the class boundaries
            let depths = (0..8).map(|i| 0.06 + 0.12 * i as f64 + 0.01 * k as f64).collect();
            FrozenRay { ray, depths }
        })
        .collect();
    let b = 4.0;
    let mut grads = GradBuffer::new(2, g.nodes().len());
    let (_, d_b) = frozen_gradient(&g, b, &rays, &w, &mut grads);

    let h = 1e-3f32;
    let mut worst = [0.0f64; 2];
    let mut params = 1;
    let mut touched: Vec<u32> = grads.touched().to_vec();
    touched.sort_unstable();
    touched.dedup();
    for ch in [SDF, RADIANCE] {
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &n in &touched {
            let v0 = g.nodes().get(n, ch);
            let (vp, vm) = (v0 + h, v0 - h);
            g.nodes_mut().set(n, ch, vp);
            let lp = frozen_loss(&g, b, &rays, &w).total;
            g.nodes_mut().set(n, ch, vm);
            let lm = frozen_loss(&g, b, &rays, &w).total;
            g.nodes_mut().set(n, ch, v0);
            numeric.push((lp - lm) / (vp as f64 - vm as f64));
            analytic.push(grads.get(n, ch));
        }
        params += touched.len();
        worst[ch] = relative_error(&analytic, &numeric);
    }
    let hb = 1e-5;
    let fd_b = (frozen_loss(&g, b + hb, &rays, &w).total - frozen_loss(&g, b - hb, &rays, &w).total) / (2.0 * hb);
    GradientCheck {
        sdf: worst[SDF],
        radiance: worst[RADIANCE],
        sharpness: (d_b - fd_b).abs() / fd_b.abs().max(1e-12),
        params,
    }
}

/// Largest componentwise relative error, with components below a thousandth
/// of the largest magnitude measured against that floor instead.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-3 * scale.max(1e-300);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(floor))
        .fold(0.0, f64::max)
}
