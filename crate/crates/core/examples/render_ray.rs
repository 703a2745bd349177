//! Render one ray through a grid holding a sphere SDF and print where the
//! compositing weight lands.

use dynvox::render::{intersect_bbox, sample_uniform, Ray, RaySampleBatch};
use dynvox::{Aabb, DynamicGrid, GridConfig, Vec3};

fn main() -> dynvox::Result<()> {
    let truncation = 0.1;
    let bbox = Aabb::new(Vec3::repeat(-1.0), Vec3::repeat(1.0));
    let mut grid = DynamicGrid::new(GridConfig::new(bbox, [32, 32, 32], 1))?;
    let rows: Vec<u32> = grid.active_rows().collect();
    for row in rows {
        let v = grid.voxel_ref(row);
        for i in 0..8 {
            let p = v.corner_position(i);
            let s = ((p.norm() - 0.5) / truncation).clamp(-1.0, 1.0);
            grid.nodes_mut().set(v.corners[i], 0, s as f32);
            grid.nodes_mut().set(v.corners[i], 1, if p.x > 0.0 { 0.8 } else { 0.2 });
        }
    }

    let ray = Ray {
        origin: Vec3::new(1.5, 0.0, 0.0),
        dir: -Vec3::x(),
        pixel: 0,
        frame: 0,
        gray: 0.8,
        depth: 1.0,
    };
    let (t0, t1) = intersect_bbox(&ray.origin, &ray.dir, grid.bbox()).expect("ray hits the box");
    let depths = sample_uniform::<rand_chacha::ChaCha8Rng>(t0, t1, 256, None);
    let mut batch = RaySampleBatch::default();
    batch.evaluate(&ray, &depths, &grid);
    for b in [0.5, 2.0, 10.0] {
        let c = batch.composite(b);
        let peak = (0..batch.len()).max_by(|&i, &j| batch.weight[i].total_cmp(&batch.weight[j])).unwrap();
        println!(
            "b {b:>4}: color {:.4}, depth {:.4} (surface at 1.0), weight sum {:.4}, peak weight at t {:.4}",
            c.color.unwrap_or(f64::NAN),
            c.depth.unwrap_or(f64::NAN),
            c.weight_sum,
            batch.t[peak]
        );
    }
    Ok(())
}
