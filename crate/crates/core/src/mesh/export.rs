use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::Mesh;
use crate::geom::Vec3;
use crate::{Error, Result};

/// Binary little-endian PLY with float32 positions and int32 index lists.
pub fn write_ply(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    )?;
    for v in &mesh.vertices {
        for a in 0..3 {
            w.write_f32::<LittleEndian>(v[a] as f32)?;
        }
    }
    for f in &mesh.faces {
        w.write_u8(3)?;
        for &i in f {
            w.write_i32::<LittleEndian>(i as i32)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the PLY layout produced by [`write_ply`].
pub fn read_ply(path: impl AsRef<Path>) -> Result<Mesh> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Format("not a PLY file".into()));
    }
    let (mut nv, mut nf) = (None, None);
    let mut binary = false;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("PLY header is not terminated".into()));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => binary = true,
            ["element", "vertex", n] => nv = n.parse::<usize>().ok(),
            ["element", "face", n] => nf = n.parse::<usize>().ok(),
            _ => {}
        }
    }
    let (Some(nv), Some(nf)) = (nv, nf) else {
        return Err(Error::Format("PLY header lacks vertex or face counts".into()));
    };
    if !binary {
        return Err(Error::Format("only binary little-endian PLY is supported".into()));
    }
    let mut mesh = Mesh {
        vertices: Vec::with_capacity(nv),
        faces: Vec::with_capacity(nf),
    };
    let bad = |e: std::io::Error| Error::Format(format!("truncated PLY body: {e}"));
    for _ in 0..nv {
        let mut p = [0f32; 3];
        r.read_f32_into::<LittleEndian>(&mut p).map_err(bad)?;
        mesh.vertices.push(Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64));
    }
    for _ in 0..nf {
        let n = r.read_u8().map_err(bad)?;
        if n != 3 {
            return Err(Error::Format("only triangle faces are supported".into()));
        }
        let mut f = [0u32; 3];
        for slot in &mut f {
            let i = r.read_i32::<LittleEndian>().map_err(bad)?;
            if i < 0 || i as usize >= nv {
                return Err(Error::Format(format!("face index {i} out of range")));
            }
            *slot = i as u32;
        }
        mesh.faces.push(f);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format("trailing bytes after PLY body".into()));
    }
    Ok(mesh)
}

pub fn write_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `v` and triangular `f` records; texture and normal indices in
/// `f a/b/c` forms are ignored. Polygons are fan-triangulated.
pub fn read_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let r = BufReader::new(File::open(path)?);
    let mut mesh = Mesh::default();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let mut toks = line.split_whitespace();
        let bad = || Error::Format(format!("OBJ line {}: malformed record", ln + 1));
        match toks.next() {
            Some("v") => {
                let c: Vec<f64> = toks.take(3).map(|t| t.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
                if c.len() != 3 {
                    return Err(bad());
                }
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = toks
                    .map(|t| {
                        let i: i64 = t.split('/').next().unwrap_or("").parse().map_err(|_| bad())?;
                        let n = mesh.vertices.len() as i64;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 || i >= n {
                            return Err(Error::Format(format!("OBJ line {}: index out of range", ln + 1)));
                        }
                        Ok(i as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad());
                }
                for k in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// Writes by extension: `.ply` or `.obj`.
pub fn write_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match ext(path).as_deref() {
        Some("ply") => write_ply(mesh, path),
        Some("obj") => write_obj(mesh, path),
        _ => Err(Error::Config(format!("unsupported mesh format: {}", path.display()))),
    }
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    match ext(path).as_deref() {
        Some("ply") => read_ply(path),
        Some("obj") => read_obj(path),
        _ => Err(Error::Config(format!("unsupported mesh format: {}", path.display()))),
    }
}

fn ext(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> Mesh {
        Mesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.5),
                Vec3::new(0.0, 1.0, 0.25),
            ],
            faces: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    #[test]
    fn ply_and_obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["m.ply", "m.obj"] {
            let p = dir.path().join(name);
            write_mesh(&quad(), &p).unwrap();
            assert_eq!(read_mesh(&p).unwrap(), quad());
        }
        assert!(write_mesh(&quad(), dir.path().join("m.stl")).is_err());
    }

    #[test]
    fn ply_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ply");
        write_ply(&quad(), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 2);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_ply(&p), Err(Error::Format(_))));
        std::fs::write(&p, b"solid x\n").unwrap();
        assert!(read_ply(&p).is_err());
    }

    #[test]
    fn obj_polygons_are_fanned() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.obj");
        std::fs::write(&p, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 -1\n").unwrap();
        let m = read_obj(&p).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }
}
