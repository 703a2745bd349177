use std::collections::HashMap;

use super::{Mesh, SampledVolume};
use crate::mc_tables::{EDGE_TABLE, TRI_TABLE};

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the `iso` level set of `vol`. Vertices on shared cube edges are
/// emitted once; the inside (`value < iso`) lies behind each triangle, so a
/// closed surface has outward normals. Cubes with any masked or non-finite
/// corner are skipped.
pub fn marching_cubes(vol: &SampledVolume, iso: f64) -> Mesh {
    let [nx, ny, nz] = vol.dims;
    let mut mesh = Mesh::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return mesh;
    }
    let spacing = vol.spacing();
    let origin = vol.bbox.min();
    // (lower lattice point, axis) -> vertex index
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();
    let mut vals = [0.0f64; 8];
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut cube = 0usize;
                let mut skip = false;
                for (c, off) in CORNERS.iter().enumerate() {
                    let (ci, cj, ck) = (i + off[0], j + off[1], k + off[2]);
                    let v = vol.get(ci, cj, ck);
                    if !v.is_finite() || !vol.is_valid(ci, cj, ck) {
                        skip = true;
                        break;
                    }
                    vals[c] = v;
                    if v < iso {
                        cube |= 1 << c;
                    }
                }
                if skip || EDGE_TABLE[cube] == 0 {
                    continue;
                }
                let mut idx = [u32::MAX; 12];
                for (e, [a, b]) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[cube] & (1 << e) == 0 {
                        continue;
                    }
                    let (oa, ob) = (CORNERS[*a], CORNERS[*b]);
                    let axis = (0..3).find(|&d| oa[d] != ob[d]).unwrap();
                    let lower = vol.index(i + oa[0], j + oa[1], k + oa[2]);
                    idx[e] = *edge_vertex.entry((lower, axis as u8)).or_insert_with(|| {
                        let (va, vb) = (vals[*a], vals[*b]);
                        let t = if vb != va { ((iso - va) / (vb - va)).clamp(0.0, 1.0) } else { 0.5 };
                        let mut p = origin;
                        for d in 0..3 {
                            let base = [i, j, k][d] + oa[d];
                            p[d] += (base as f64 + if d == axis { t } else { 0.0 }) * spacing[d];
                        }
                        mesh.vertices.push(p);
                        (mesh.vertices.len() - 1) as u32
                    });
                }
                for tri in TRI_TABLE[cube].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let f = [idx[tri[0] as usize], idx[tri[2] as usize], idx[tri[1] as usize]];
                    if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                        continue;
                    }
                    mesh.faces.push(f);
                }
            }
        }
    }
    // drop zero-area faces created by vertices snapped onto lattice points
    let faces = std::mem::take(&mut mesh.faces);
    mesh.faces = faces
        .into_iter()
        .filter(|f| {
            let [a, b, c] = f.map(|v| mesh.vertices[v as usize]);
            (b - a).cross(&(c - a)).norm_squared() > 0.0
        })
        .collect();
    mesh
}
