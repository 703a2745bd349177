//! Binary grid snapshots.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header      8 bytes magic "DYNVOXG\0", u32 version, u32 reserved (0)
//! config      f64 x3 bbox_min, f64 x3 bbox_max, u32 x3 base_res,
//!             u32 max_levels, u32 modality_dim
//! nodes       u64 node_count, f32 x (node_count * modality_dim) values
//!             (row-major), u8 x node_count observed flags
//! voxels      u64 voxel_count, then per row:
//!             u32 x8 corner ids, u64 key, u8 level, u8 active
//! levels      u32 level_count, then per level:
//!             u64 entry_count, (u64 key, u32 row) x entry_count
//!             in increasing key order
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{DynamicGrid, GridConfig, LevelIndex, NodeStore, VoxelTable};
use crate::geom::Aabb;
use crate::{Error, Result};

pub const SNAPSHOT_MAGIC: [u8; 8] = *b"DYNVOXG\0";
pub const SNAPSHOT_VERSION: u32 = 1;

pub fn write_snapshot<W: Write>(grid: &DynamicGrid, mut w: W) -> Result<()> {
    w.write_all(&SNAPSHOT_MAGIC)?;
    w.write_u32::<LE>(SNAPSHOT_VERSION)?;
    w.write_u32::<LE>(0)?;

    let c = grid.config();
    for v in c.bbox.min.iter().chain(&c.bbox.max) {
        w.write_f64::<LE>(*v)?;
    }
    for v in c.base_res {
        w.write_u32::<LE>(v)?;
    }
    w.write_u32::<LE>(c.max_levels)?;
    w.write_u32::<LE>(c.modality_dim as u32)?;

    let nodes = grid.nodes();
    w.write_u64::<LE>(nodes.len() as u64)?;
    for v in nodes.values() {
        w.write_f32::<LE>(*v)?;
    }
    for &o in nodes.observed() {
        w.write_u8(o as u8)?;
    }

    let t = grid.voxels();
    w.write_u64::<LE>(t.len() as u64)?;
    for row in 0..t.len() {
        for c in &t.corners[row] {
            w.write_u32::<LE>(*c)?;
        }
        w.write_u64::<LE>(t.key[row])?;
        w.write_u8(t.level[row])?;
        w.write_u8(t.active[row] as u8)?;
    }

    w.write_u32::<LE>(grid.levels().len() as u32)?;
    for level in grid.levels() {
        let entries = level.entries();
        w.write_u64::<LE>(entries.len() as u64)?;
        for (k, r) in entries {
            w.write_u64::<LE>(k)?;
            w.write_u32::<LE>(r)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_bool<R: Read>(r: &mut R) -> Result<bool> {
    match r.read_u8()? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(bad(format!("invalid flag byte {v}"))),
    }
}

/// Reads a snapshot written by [`write_snapshot`] and validates its structure.
pub fn read_snapshot<R: Read>(mut r: R) -> Result<DynamicGrid> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != SNAPSHOT_MAGIC {
        return Err(bad("not a grid snapshot (bad magic)"));
    }
    let version = r.read_u32::<LE>()?;
    if version != SNAPSHOT_VERSION {
        return Err(bad(format!("unsupported snapshot version {version}")));
    }
    let _reserved = r.read_u32::<LE>()?;

    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for v in &mut min {
        *v = r.read_f64::<LE>()?;
    }
    for v in &mut max {
        *v = r.read_f64::<LE>()?;
    }
    let mut base_res = [0u32; 3];
    for v in &mut base_res {
        *v = r.read_u32::<LE>()?;
    }
    let config = GridConfig {
        bbox: Aabb { min, max },
        base_res,
        max_levels: r.read_u32::<LE>()?,
        modality_dim: r.read_u32::<LE>()? as usize,
    };
    config.validate()?;

    let node_count = r.read_u64::<LE>()? as usize;
    let dim = config.modality_dim;
    let mut values = vec![0.0f32; node_count * dim];
    r.read_f32_into::<LE>(&mut values)?;
    let mut observed = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        observed.push(read_bool(&mut r)?);
    }
    let nodes = NodeStore::from_parts(dim, values, observed);

    let voxel_count = r.read_u64::<LE>()? as usize;
    let mut table = VoxelTable::default();
    for _ in 0..voxel_count {
        let mut corners = [0u32; 8];
        r.read_u32_into::<LE>(&mut corners)?;
        table.corners.push(corners);
        table.key.push(r.read_u64::<LE>()?);
        table.level.push(r.read_u8()?);
        table.active.push(read_bool(&mut r)?);
    }

    let level_count = r.read_u32::<LE>()?;
    if level_count != config.max_levels {
        return Err(bad("level count does not match max_levels"));
    }
    let mut levels = Vec::with_capacity(level_count as usize);
    for l in 0..level_count {
        let n = r.read_u64::<LE>()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            entries.push((r.read_u64::<LE>()?, r.read_u32::<LE>()?));
        }
        if l == 0 {
            let d = config.level_dims(0);
            if n as u64 != d[0] * d[1] * d[2] || entries.iter().enumerate().any(|(i, e)| e.0 != i as u64) {
                return Err(bad("level 0 index must be dense"));
            }
            levels.push(LevelIndex::Dense(entries.into_iter().map(|e| e.1).collect()));
        } else {
            levels.push(LevelIndex::Sparse(entries.into_iter().collect::<BTreeMap<_, _>>()));
        }
    }

    let grid = DynamicGrid::from_parts(config, nodes, table, levels);
    grid.check_integrity().map_err(bad)?;
    Ok(grid)
}
