//! Dataset directory layout:
//!
//! ```text
//! <root>/intrinsics.txt      fx fy cx cy width height
//! <root>/poses/NNNN.txt      4x4 camera-to-world matrix, row-major
//! <root>/color/NNNN.png      8- or 16-bit color or gray image
//! <root>/depth/NNNN.png      16-bit single-channel depth in millimeters, 0 = invalid
//! ```
//!
//! Frames are matched by file stem and loaded in increasing stem order.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use nalgebra::Matrix4;

use super::{check_rigid, luminance, Dataset, Frame, POSE_FILE_TOLERANCE};
use crate::render::Camera;
use crate::{Error, Result};

pub const INTRINSICS_FILE: &str = "intrinsics.txt";

fn stems(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::dataset(dir, format!("cannot list directory: {e}")))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn read_intrinsics(path: &Path) -> Result<Camera> {
    let text = fs::read_to_string(path).map_err(|e| Error::dataset(path, e.to_string()))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::dataset(path, format!("bad number: {e}")))?;
    if vals.len() != 6 {
        return Err(Error::dataset(path, "expected 6 values: fx fy cx cy width height"));
    }
    if vals[4].fract() != 0.0 || vals[5].fract() != 0.0 || vals[4] < 1.0 || vals[5] < 1.0 {
        return Err(Error::dataset(path, "image size must be positive integers"));
    }
    let cam = Camera {
        fx: vals[0],
        fy: vals[1],
        cx: vals[2],
        cy: vals[3],
        width: vals[4] as u32,
        height: vals[5] as u32,
    };
    cam.validate().map_err(|e| Error::dataset(path, e.to_string()))?;
    Ok(cam)
}

fn read_pose(path: &Path) -> Result<Matrix4<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::dataset(path, e.to_string()))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::dataset(path, format!("bad number: {e}")))?;
    if vals.len() != 16 {
        return Err(Error::dataset(path, format!("expected 16 values, found {}", vals.len())));
    }
    let m = Matrix4::from_row_slice(&vals);
    check_rigid(&m, POSE_FILE_TOLERANCE).map_err(|e| Error::dataset(path, e))?;
    Ok(m)
}

fn read_gray(path: &Path, cam: &Camera) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| Error::dataset(path, e.to_string()))?;
    if img.width() != cam.width || img.height() != cam.height {
        return Err(Error::dataset(path, "color image size does not match intrinsics"));
    }
    let rgb = img.to_rgb32f();
    Ok(rgb.pixels().map(|p| luminance(p[0], p[1], p[2])).collect())
}

fn read_depth(path: &Path, cam: &Camera) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| Error::dataset(path, e.to_string()))?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::dataset(path, "depth must be a 16-bit single-channel PNG"));
    };
    if buf.width() != cam.width || buf.height() != cam.height {
        return Err(Error::dataset(path, "depth image size does not match intrinsics"));
    }
    Ok(buf.pixels().map(|p| p[0] as f32 / 1000.0).collect())
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let camera = read_intrinsics(&root.join(INTRINSICS_FILE))?;
    let poses = stems(&root.join("poses"), "txt")?;
    let colors = stems(&root.join("color"), "png")?;
    let depths = stems(&root.join("depth"), "png")?;
    if poses.is_empty() {
        return Err(Error::dataset(root, "no pose files found"));
    }
    if poses.len() != colors.len() || poses.len() != depths.len() {
        return Err(Error::dataset(
            root,
            format!(
                "mismatched frame counts: {} poses, {} color, {} depth",
                poses.len(),
                colors.len(),
                depths.len()
            ),
        ));
    }
    let mut frames = Vec::with_capacity(poses.len());
    for ((p, c), d) in poses.iter().zip(&colors).zip(&depths) {
        if p.0 != c.0 || p.0 != d.0 {
            return Err(Error::dataset(root, format!("frame names differ: {} / {} / {}", p.0, c.0, d.0)));
        }
        let id = p.0.parse::<u32>().unwrap_or(frames.len() as u32);
        frames.push(Frame {
            id,
            gray: read_gray(&c.1, &camera)?,
            depth: read_depth(&d.1, &camera)?,
            pose: read_pose(&p.1)?,
        });
    }
    Ok(Dataset { camera, frames })
}

/// Writes `dataset` in the layout read by [`load_dataset`]. Gray values are
/// quantized to 8 bits and depth to whole millimeters; pose values are
/// written with round-trip precision.
pub fn save_dataset(root: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let root = root.as_ref();
    let cam = &dataset.camera;
    for sub in ["poses", "color", "depth"] {
        fs::create_dir_all(root.join(sub))?;
    }
    fs::write(
        root.join(INTRINSICS_FILE),
        format!("{:?} {:?} {:?} {:?} {} {}\n", cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height),
    )?;
    for f in &dataset.frames {
        let name = format!("{:04}", f.id);
        let mut text = String::new();
        for r in 0..4 {
            let row: Vec<String> = (0..4).map(|c| format!("{:?}", f.pose[(r, c)])).collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
        fs::write(root.join("poses").join(format!("{name}.txt")), text)?;

        let color: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(cam.width, cam.height, |x, y| {
            let g = f.gray[(y * cam.width + x) as usize];
            let v = (g.clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([v, v, v])
        });
        save_png(&color, &root.join("color").join(format!("{name}.png")))?;

        let depth: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(cam.width, cam.height, |x, y| {
            let d = f.depth[(y * cam.width + x) as usize];
            Luma([(d as f64 * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16])
        });
        save_png(&depth, &root.join("depth").join(format!("{name}.png")))?;
    }
    Ok(())
}

fn save_png<P, C>(img: &ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::dataset(path, e.to_string()))
}
