//! Surface extraction, mesh files and reconstruction metrics.

mod export;
mod marching;
mod metrics;
mod volume;

use crate::geom::{Aabb, Vec3};

pub use export::{read_obj, read_ply, write_obj, write_ply, read_mesh, write_mesh};
pub use marching::marching_cubes;
pub use metrics::{evaluate, sample_surface, MeshMetrics, MetricOptions, SurfaceSamples};
pub use volume::{sample_analytic, sample_volume, SampledVolume};

/// Indexed triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.vertices.iter().fold(Aabb::empty(), |mut b, v| {
            b.extend(v);
            b
        })
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Un-normalized face normal, length twice the area.
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| 0.5 * self.face_normal(f).norm()).sum()
    }

    /// Area-weighted vertex normals, unit length where defined.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut n = vec![Vec3::zeros(); self.vertices.len()];
        for f in 0..self.faces.len() {
            let fn_ = self.face_normal(f);
            for &v in &self.faces[f] {
                n[v as usize] += fn_;
            }
        }
        for v in &mut n {
            let len = v.norm();
            if len > 0.0 {
                *v /= len;
            }
        }
        n
    }

    /// Signed volume by the divergence theorem; positive for a closed mesh
    /// with outward-facing triangles.
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn translated(&self, t: &Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| v + t).collect(),
            faces: self.faces.clone(),
        }
    }
}
