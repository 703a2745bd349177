//! Extract meshes from an analytic SDF at several resolutions, export them
//! and compare each against a fine reference.

use dynvox::mesh::{evaluate, marching_cubes, read_mesh, sample_analytic, write_mesh, MetricOptions};
use dynvox::{Aabb, Vec3};

fn torus(p: &Vec3) -> f64 {
    let q = ((p.x * p.x + p.z * p.z).sqrt() - 0.6, p.y);
    (q.0 * q.0 + q.1 * q.1).sqrt() - 0.25
}

fn main() -> dynvox::Result<()> {
    let bbox = Aabb::new(Vec3::repeat(-1.0), Vec3::repeat(1.0));
    let reference = marching_cubes(&sample_analytic(torus, &bbox, [192; 3]), 0.0);
    let dir = std::env::temp_dir();
    for cells in [16, 32, 64] {
        let mesh = marching_cubes(&sample_analytic(torus, &bbox, [cells; 3]), 0.0);
        let path = dir.join(format!("torus_{cells}.ply"));
        write_mesh(&mesh, &path)?;
        let back = read_mesh(&path)?;
        let m = evaluate(&back, &reference, &MetricOptions { threshold: 0.02, ..Default::default() });
        println!(
            "{cells:>3} cells: {} faces, area {:.4}, chamfer {:.5}, fscore {:.3}, normals {:.4}, iou {:.3}",
            back.faces.len(),
            back.area(),
            m.chamfer,
            m.fscore,
            m.normal_consistency,
            m.iou
        );
    }
    println!("analytic area {:.4}", 4.0 * std::f64::consts::PI.powi(2) * 0.6 * 0.25);
    Ok(())
}
