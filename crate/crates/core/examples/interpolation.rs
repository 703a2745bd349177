//! Trilinear interpolation reproduces affine fields exactly, and splitting
//! voxels does not change the field.

use dynvox::field::query;
use dynvox::{Aabb, DynamicGrid, GridConfig, Vec3};

fn field(p: &Vec3) -> f64 {
    0.25 * p.x - 0.5 * p.y + 0.1 * p.z + 0.05
}

fn main() -> dynvox::Result<()> {
    let bbox = Aabb::new(Vec3::zeros(), Vec3::repeat(2.0));
    let mut grid = DynamicGrid::new(GridConfig::new(bbox, [3, 3, 3], 2))?;
    let rows: Vec<u32> = grid.active_rows().collect();
    for &row in &rows {
        let v = grid.voxel_ref(row);
        for i in 0..8 {
            let p = v.corner_position(i);
            grid.nodes_mut().set(v.corners[i], 0, field(&p) as f32);
            grid.nodes_mut().set(v.corners[i], 1, 0.5);
        }
    }
    let probes = [Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.3, 0.7, 1.9), Vec3::new(0.9, 1.5, 0.4)];
    for p in &probes {
        let (sdf, radiance) = query(p, &grid)?;
        println!("{p:?}: sdf {sdf:.6} (exact {:.6}), radiance {radiance}", field(p));
    }

    let before: Vec<f64> = probes.iter().map(|p| query(p, &grid).unwrap().0).collect();
    grid.subdivide(&rows);
    for (p, b) in probes.iter().zip(before) {
        let after = query(p, &grid)?.0;
        println!("{p:?}: change after split {:.2e}", (after - b).abs());
    }
    Ok(())
}
