//! Render an analytic scene into an RGB-D dataset directory.
//!
//! ```text
//! cargo run --release --example synth_scene -- /tmp/scene
//! ```

use dynvox::scene_io::{load_dataset, save_dataset, SceneFile};

const SCENE: &str = r#"
[[primitive]]
kind = "sphere"
center = [-0.4, 0.0, 0.0]
radius = 0.5

[[primitive]]
kind = "box"
center = [0.5, 0.0, 0.0]
half = [0.3, 0.3, 0.3]
albedo = 0.6

[camera]
fx = 120.0
fy = 120.0
cx = 64.0
cy = 48.0
width = 128
height = 96

[trajectory]
frames = 24
distance = 3.0
"#;

fn main() -> dynvox::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth_scene_out".into());
    let scene = SceneFile::parse(SCENE)?;
    let data = scene.render();
    let hits = data.frames.iter().flat_map(|f| &f.depth).filter(|&&d| d > 0.0).count();
    let total = data.frames.len() * data.camera.pixel_count();
    println!("{} frames, {hits} of {total} pixels see the scene", data.frames.len());
    save_dataset(&out, &data)?;
    let back = load_dataset(&out)?;
    println!("wrote {out} and read back {} frames", back.frames.len());
    Ok(())
}
