//! Reconstruct a sphere from rendered views on a two-level grid and score
//! the extracted mesh. Takes about a minute in release mode.

use dynvox::cli::{ground_truth_mesh, GridSettings};
use dynvox::mesh::{evaluate, marching_cubes, sample_volume, MetricOptions};
use dynvox::render::Camera;
use dynvox::scene_io::{orbit_poses, render_synthetic, AnalyticScene, TrajectorySpec};
use dynvox::train::{train, TrainConfig};

fn main() -> dynvox::Result<()> {
    let scene = AnalyticScene::unit_sphere();
    let camera = Camera { fx: 60.0, fy: 60.0, cx: 48.0, cy: 36.0, width: 96, height: 72 };
    let data = render_synthetic(&scene, &camera, &orbit_poses(&TrajectorySpec { frames: 24, ..Default::default() }));

    let cfg = TrainConfig {
        iters: 3000,
        rays_per_iter: 256,
        coarse_samples: 64,
        fine_samples: 64,
        lr: 0.03,
        decay_step: 2000,
        subdivision_steps: vec![1500],
        init_sharpness: 100.0,
        sharpness_lr: 1e-4,
        invalid_depth_is_free_space: true,
        log_every: 500,
        ..TrainConfig::default()
    };
    let settings = GridSettings { base_res: Some([24; 3]), max_levels: 2, ..Default::default() };
    let grid = settings.build(&data, cfg.truncation)?;
    let out = train(&data, grid, &cfg)?;
    for r in out.history.records.iter().filter(|r| r.iter % 500 == 0) {
        println!("{}", dynvox::train::format_record(r));
    }
    for e in &out.history.subdivisions {
        println!("subdivision at {}: {} voxels split", e.iter, e.split);
    }

    let mesh = marching_cubes(&sample_volume(&out.grid, None, true), 0.0);
    let edge = out.grid.config().cell_size(1).max();
    let m = evaluate(&mesh, &ground_truth_mesh(&scene, 128), &MetricOptions { threshold: 2.0 * edge, ..Default::default() });
    println!("{} triangles, chamfer {:.4}, fscore {:.3} at {:.3}", mesh.faces.len(), m.chamfer, m.fscore, 2.0 * edge);
    Ok(())
}
