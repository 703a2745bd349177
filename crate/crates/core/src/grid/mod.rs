//! Dynamic hierarchical voxel grid.
//!
//! The grid starts as a dense `N_x × N_y × N_z` lattice of level-0 voxels and
//! grows by splitting individual voxels into 2×2×2 children. State is kept in
//! three flat stores:
//!
//! * [`NodeStore`]: one row of `C` modality values per lattice node
//!   (column 0 is the scaled SDF, column 1 the grayscale radiance). Rows are
//!   append-only, so node ids stay stable for the whole run.
//! * [`VoxelTable`]: one row per voxel ever created, holding the 8 corner
//!   node ids, the level, the lattice key and an `active` flag. Split voxels
//!   are deactivated, never removed.
//! * [`LevelIndex`]: per level, a map from lattice key to voxel-table row. A
//!   key being absent at level `l + 1` means the level-`l` voxel containing a
//!   point is terminal.
//!
//! Corner order is x-fastest: corner `i` sits at offset
//! `(i & 1, (i >> 1) & 1, (i >> 2) & 1)` from the voxel's minimum corner.

mod snapshot;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geom::{Aabb, Vec3};
use crate::{Error, Result};

pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

/// Column of the node store holding the scaled signed distance.
pub const SDF: usize = 0;
/// Column of the node store holding the grayscale radiance.
pub const RADIANCE: usize = 1;
/// Largest supported modality dimension.
pub const MAX_MODALITIES: usize = 4;
/// Hard cap on the number of levels a grid may be configured with.
pub const LEVEL_CAP: u32 = 10;

/// Offset of corner `i` in the x-fastest convention.
#[inline]
pub fn corner_offset(i: usize) -> [u64; 3] {
    [(i & 1) as u64, ((i >> 1) & 1) as u64, ((i >> 2) & 1) as u64]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub bbox: Aabb,
    /// Level-0 voxel counts per axis.
    pub base_res: [u32; 3],
    /// Number of levels, including level 0. `1` disables subdivision.
    pub max_levels: u32,
    pub modality_dim: usize,
}

impl GridConfig {
    pub fn new(bbox: Aabb, base_res: [u32; 3], max_levels: u32) -> Self {
        Self {
            bbox,
            base_res,
            max_levels,
            modality_dim: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.bbox.min[a] < self.bbox.max[a]) {
                return Err(Error::Config(format!(
                    "bbox_min must be below bbox_max on axis {a}"
                )));
            }
            if !self.bbox.min[a].is_finite() || !self.bbox.max[a].is_finite() {
                return Err(Error::Config("bbox must be finite".into()));
            }
            if self.base_res[a] < 2 {
                return Err(Error::Config(format!(
                    "base resolution must be at least 2 on axis {a}"
                )));
            }
        }
        if self.max_levels == 0 || self.max_levels > LEVEL_CAP {
            return Err(Error::Config(format!(
                "max_levels must be in 1..={LEVEL_CAP}, got {}",
                self.max_levels
            )));
        }
        if !(2..=MAX_MODALITIES).contains(&self.modality_dim) {
            return Err(Error::Config(format!(
                "modality_dim must be in 2..={MAX_MODALITIES}"
            )));
        }
        // The finest lattice must be addressable by a u64 key and by u32 cell
        // coordinates.
        let finest = self.level_dims(self.max_levels - 1);
        let mut total: u64 = 1;
        for &d in &finest {
            if d > u32::MAX as u64 {
                return Err(Error::Config("resolution overflows cell coordinates".into()));
            }
            total = total
                .checked_mul(d)
                .ok_or_else(|| Error::Config("resolution overflows the key range".into()))?;
        }
        Ok(())
    }

    /// Voxel counts per axis at `level`.
    pub fn level_dims(&self, level: u32) -> [u64; 3] {
        let s = 1u64 << level;
        [
            self.base_res[0] as u64 * s,
            self.base_res[1] as u64 * s,
            self.base_res[2] as u64 * s,
        ]
    }

    /// Voxel edge lengths at `level`.
    pub fn cell_size(&self, level: u32) -> Vec3 {
        let e = self.bbox.extent();
        let s = (1u64 << level) as f64;
        Vec3::new(
            e.x / (self.base_res[0] as f64 * s),
            e.y / (self.base_res[1] as f64 * s),
            e.z / (self.base_res[2] as f64 * s),
        )
    }

    /// Lattice resolution at the finest level (`base_res · 2^(L_max − 1)`).
    pub fn finest_res(&self) -> [u64; 3] {
        self.level_dims(self.max_levels - 1)
    }
}

/// Lattice key of cell `(ix, iy, iz)` at `level`.
///
/// The y stride is scaled by `2^level` as well so that the key is a bijection
/// on each level's lattice.
pub fn encode_key(level: u32, cell: [u64; 3], base_res: [u32; 3]) -> Result<u64> {
    let s = 1u64 << level;
    let nx = base_res[0] as u64 * s;
    let ny = base_res[1] as u64 * s;
    let nz = base_res[2] as u64 * s;
    if cell[0] >= nx || cell[1] >= ny || cell[2] >= nz {
        return Err(Error::Precondition(format!(
            "cell {cell:?} outside the level-{level} lattice {nx}x{ny}x{nz}"
        )));
    }
    Ok(key_unchecked(cell, nx, ny))
}

#[inline]
fn key_unchecked(cell: [u64; 3], nx: u64, ny: u64) -> u64 {
    cell[2] * nx * ny + cell[1] * nx + cell[0]
}

pub fn decode_key(level: u32, key: u64, base_res: [u32; 3]) -> Result<[u64; 3]> {
    let s = 1u64 << level;
    let nx = base_res[0] as u64 * s;
    let ny = base_res[1] as u64 * s;
    let nz = base_res[2] as u64 * s;
    if key >= nx * ny * nz {
        return Err(Error::Precondition(format!(
            "key {key} outside the level-{level} lattice"
        )));
    }
    Ok([key % nx, (key / nx) % ny, key / (nx * ny)])
}

/// Per-node modality values, `C` columns per row.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeStore {
    dim: usize,
    values: Vec<f32>,
    /// Set once a node has been a corner of a voxel holding a depth-supervised
    /// sample. Marching cubes uses it to ignore never-observed space.
    /// Training clears it at every subdivision.
    observed: Vec<bool>,
}

impl NodeStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            values: Vec::new(),
            observed: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    fn push(&mut self, row: &[f32], observed: bool) -> u32 {
        debug_assert_eq!(row.len(), self.dim);
        let id = self.len() as u32;
        self.values.extend_from_slice(row);
        self.observed.push(observed);
        id
    }

    #[inline]
    pub fn get(&self, node: u32, channel: usize) -> f32 {
        self.values[node as usize * self.dim + channel]
    }

    #[inline]
    pub fn set(&mut self, node: u32, channel: usize, v: f32) {
        self.values[node as usize * self.dim + channel] = v;
    }

    pub fn row(&self, node: u32) -> &[f32] {
        let s = node as usize * self.dim;
        &self.values[s..s + self.dim]
    }

    /// Flat row-major value matrix.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn is_observed(&self, node: u32) -> bool {
        self.observed[node as usize]
    }

    #[inline]
    pub fn mark_observed(&mut self, node: u32) {
        self.observed[node as usize] = true;
    }

    pub fn clear_observed(&mut self) {
        self.observed.fill(false);
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    /// Projects every value onto its legal range: SDF to `[-1, 1]`,
    /// radiance channels to `[0, 1]`.
    pub fn clamp_all(&mut self) {
        let dim = self.dim;
        for (i, v) in self.values.iter_mut().enumerate() {
            *v = clamp_channel(i % dim, *v);
        }
    }

    pub(crate) fn from_parts(dim: usize, values: Vec<f32>, observed: Vec<bool>) -> Self {
        Self {
            dim,
            values,
            observed,
        }
    }
}

#[inline]
pub fn clamp_channel(channel: usize, v: f32) -> f32 {
    if channel == SDF {
        v.clamp(-1.0, 1.0)
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Every voxel ever created, indexed by row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VoxelTable {
    pub(crate) corners: Vec<[u32; 8]>,
    pub(crate) active: Vec<bool>,
    pub(crate) level: Vec<u8>,
    pub(crate) key: Vec<u64>,
}

impl VoxelTable {
    pub fn len(&self) -> usize {
        self.corners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corners.is_empty()
    }

    pub fn corners(&self, row: u32) -> &[u32; 8] {
        &self.corners[row as usize]
    }

    pub fn is_active(&self, row: u32) -> bool {
        self.active[row as usize]
    }

    pub fn level(&self, row: u32) -> u32 {
        self.level[row as usize] as u32
    }

    pub fn key(&self, row: u32) -> u64 {
        self.key[row as usize]
    }

    fn push(&mut self, corners: [u32; 8], level: u32, key: u64) -> u32 {
        let row = self.len() as u32;
        self.corners.push(corners);
        self.active.push(true);
        self.level.push(level as u8);
        self.key.push(key);
        row
    }
}

/// Key → voxel-table row map for one level.
#[derive(Clone, Debug, PartialEq)]
pub enum LevelIndex {
    /// Level 0: every key is present, row = `rows[key]`.
    Dense(Vec<u32>),
    Sparse(BTreeMap<u64, u32>),
}

impl LevelIndex {
    #[inline]
    pub fn get(&self, key: u64) -> Option<u32> {
        match self {
            LevelIndex::Dense(rows) => rows.get(key as usize).copied(),
            LevelIndex::Sparse(map) => map.get(&key).copied(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LevelIndex::Dense(rows) => rows.len(),
            LevelIndex::Sparse(map) => map.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(key, row)` pairs in increasing key order.
    pub fn entries(&self) -> Vec<(u64, u32)> {
        match self {
            LevelIndex::Dense(rows) => rows
                .iter()
                .enumerate()
                .map(|(k, &r)| (k as u64, r))
                .collect(),
            LevelIndex::Sparse(map) => map.iter().map(|(&k, &r)| (k, r)).collect(),
        }
    }

    fn insert(&mut self, key: u64, row: u32) {
        match self {
            LevelIndex::Dense(_) => unreachable!("level 0 is never extended"),
            LevelIndex::Sparse(map) => {
                map.insert(key, row);
            }
        }
    }
}

/// Handle to one active voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelRef {
    pub level: u32,
    pub key: u64,
    pub row: u32,
    pub corners: [u32; 8],
    /// World position of corner 0.
    pub min: Vec3,
    /// Edge lengths.
    pub size: Vec3,
}

impl VoxelRef {
    pub fn corner_position(&self, i: usize) -> Vec3 {
        let o = corner_offset(i);
        self.min
            + Vec3::new(
                o[0] as f64 * self.size.x,
                o[1] as f64 * self.size.y,
                o[2] as f64 * self.size.z,
            )
    }

    pub fn max(&self) -> Vec3 {
        self.min + self.size
    }

    /// Inclusive containment test with a small relative tolerance.
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| {
            let eps = 1e-9 * self.size[a];
            p[a] >= self.min[a] - eps && p[a] <= self.min[a] + self.size[a] + eps
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubdivisionReport {
    /// Node ids appended by this call.
    pub new_nodes: Vec<u32>,
    /// Voxel-table rows appended by this call (8 per split).
    pub new_rows: Vec<u32>,
    /// Rows that were split and are now inactive.
    pub deactivated: Vec<u32>,
    /// Rows that could not be split, with the reason.
    pub rejected: Vec<(u32, RejectReason)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    /// Already at the deepest configured level.
    MaxLevel,
    /// Row is inactive (already split) or listed twice.
    Inactive,
    /// Row id does not exist.
    Unknown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridStats {
    /// Active voxel count per level, `max_levels` entries.
    pub active_per_level: Vec<usize>,
    pub node_count: usize,
    pub voxel_rows: usize,
    pub bytes: usize,
}

impl GridStats {
    pub fn active_total(&self) -> usize {
        self.active_per_level.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicGrid {
    config: GridConfig,
    origin: Vec3,
    /// Reciprocal level-0 cell size per axis.
    inv_cell0: Vec3,
    nodes: NodeStore,
    voxels: VoxelTable,
    levels: Vec<LevelIndex>,
}

impl DynamicGrid {
    /// Dense level-0 grid: SDF 0 on the bounding-box boundary and 1 inside,
    /// radiance 0 everywhere.
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let [nx, ny, nz] = config.base_res.map(|v| v as u64);
        let (px, py) = (nx + 1, ny + 1);
        let dim = config.modality_dim;

        let mut nodes = NodeStore::new(dim);
        let mut row = vec![0.0f32; dim];
        for z in 0..=nz {
            for y in 0..=ny {
                for x in 0..=nx {
                    let boundary = x == 0 || y == 0 || z == 0 || x == nx || y == ny || z == nz;
                    row[SDF] = if boundary { 0.0 } else { 1.0 };
                    nodes.push(&row, false);
                }
            }
        }

        let mut voxels = VoxelTable::default();
        let mut dense = Vec::with_capacity((nx * ny * nz) as usize);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let mut corners = [0u32; 8];
                    for (i, c) in corners.iter_mut().enumerate() {
                        let o = corner_offset(i);
                        *c = ((z + o[2]) * px * py + (y + o[1]) * px + (x + o[0])) as u32;
                    }
                    let key = key_unchecked([x, y, z], nx, ny);
                    dense.push(voxels.push(corners, 0, key));
                }
            }
        }

        let mut levels = vec![LevelIndex::Dense(dense)];
        for _ in 1..config.max_levels {
            levels.push(LevelIndex::Sparse(BTreeMap::new()));
        }
        Ok(Self::from_parts(config, nodes, voxels, levels))
    }

    pub(crate) fn from_parts(
        config: GridConfig,
        nodes: NodeStore,
        voxels: VoxelTable,
        levels: Vec<LevelIndex>,
    ) -> Self {
        let origin = config.bbox.min();
        let c0 = config.cell_size(0);
        Self {
            origin,
            inv_cell0: Vec3::new(1.0 / c0.x, 1.0 / c0.y, 1.0 / c0.z),
            config,
            nodes,
            voxels,
            levels,
        }
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn bbox(&self) -> &Aabb {
        &self.config.bbox
    }

    pub fn nodes(&self) -> &NodeStore {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut NodeStore {
        &mut self.nodes
    }

    pub fn voxels(&self) -> &VoxelTable {
        &self.voxels
    }

    pub fn level_index(&self, level: u32) -> &LevelIndex {
        &self.levels[level as usize]
    }

    pub fn levels(&self) -> &[LevelIndex] {
        &self.levels
    }

    /// Rows of all currently active voxels in table order.
    pub fn active_rows(&self) -> impl Iterator<Item = u32> + '_ {
        self.voxels
            .active
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(r, _)| r as u32)
    }

    /// Builds the [`VoxelRef`] of a table row.
    pub fn voxel_ref(&self, row: u32) -> VoxelRef {
        let level = self.voxels.level(row);
        let key = self.voxels.key(row);
        let dims = self.config.level_dims(level);
        let cell = [key % dims[0], (key / dims[0]) % dims[1], key / (dims[0] * dims[1])];
        let size = self.config.cell_size(level);
        VoxelRef {
            level,
            key,
            row,
            corners: self.voxels.corners[row as usize],
            min: self.origin
                + Vec3::new(
                    cell[0] as f64 * size.x,
                    cell[1] as f64 * size.y,
                    cell[2] as f64 * size.z,
                ),
            size,
        }
    }

    /// Deepest active voxel containing `x`.
    ///
    /// A point on a face shared by two cells belongs to the cell with the
    /// larger index, except on the bounding-box max faces where it is clamped
    /// into the last cell.
    pub fn trace(&self, x: &Vec3) -> Result<VoxelRef> {
        if !self.config.bbox.contains(x) {
            return Err(Error::out_of_domain(x));
        }
        Ok(self.trace_unchecked(x))
    }

    /// [`trace`](Self::trace) without the domain check; points outside the box
    /// are clamped onto its boundary cells.
    pub fn trace_unchecked(&self, x: &Vec3) -> VoxelRef {
        let u = (x - self.origin).component_mul(&self.inv_cell0);
        let mut level = 0u32;
        let mut cell = self.cell_at(&u, 0);
        let dims0 = self.config.level_dims(0);
        let mut key = key_unchecked(cell, dims0[0], dims0[1]);
        let mut row = self.levels[0].get(key).expect("level 0 is dense");
        while level + 1 < self.config.max_levels && !self.voxels.active[row as usize] {
            let next = level + 1;
            let c = self.cell_at(&u, next);
            let d = self.config.level_dims(next);
            let k = key_unchecked(c, d[0], d[1]);
            match self.levels[next as usize].get(k) {
                Some(r) => {
                    level = next;
                    cell = c;
                    key = k;
                    row = r;
                }
                None => break,
            }
        }
        let size = self.config.cell_size(level);
        VoxelRef {
            level,
            key,
            row,
            corners: self.voxels.corners[row as usize],
            min: self.origin
                + Vec3::new(
                    cell[0] as f64 * size.x,
                    cell[1] as f64 * size.y,
                    cell[2] as f64 * size.z,
                ),
            size,
        }
    }

    #[inline]
    fn cell_at(&self, u: &Vec3, level: u32) -> [u64; 3] {
        let s = (1u64 << level) as f64;
        let dims = self.config.level_dims(level);
        let mut c = [0u64; 3];
        for a in 0..3 {
            let f = (u[a] * s).floor();
            c[a] = if f <= 0.0 {
                0
            } else {
                (f as u64).min(dims[a] - 1)
            };
        }
        c
    }

    /// Splits each listed voxel into 8 children one level deeper.
    ///
    /// The 27-point child lattice of a voxel reuses the parent's 8 corner
    /// nodes. Remaining lattice points get new nodes whose values are the
    /// trilinear interpolation of the parent at that point (the mean of the 2,
    /// 4 or 8 parent corners it lies between), so the field is unchanged by a
    /// split. Lattice points shared by voxels split in the same call are
    /// created once: they are keyed by the set of parent nodes they
    /// interpolate, so two parents share a new node only when they would give
    /// it the same value.
    pub fn subdivide(&mut self, rows: &[u32]) -> SubdivisionReport {
        let mut report = SubdivisionReport::default();
        let mut shared: HashMap<Vec<u32>, u32> = HashMap::new();
        let dim = self.nodes.dim();
        let mut accum = vec![0.0f64; dim];
        let mut row_buf = vec![0.0f32; dim];

        for &row in rows {
            if row as usize >= self.voxels.len() {
                report.rejected.push((row, RejectReason::Unknown));
                continue;
            }
            if !self.voxels.active[row as usize] {
                report.rejected.push((row, RejectReason::Inactive));
                continue;
            }
            let level = self.voxels.level(row);
            if level + 1 >= self.config.max_levels {
                report.rejected.push((row, RejectReason::MaxLevel));
                continue;
            }
            let parent = self.voxel_ref(row);
            let pcell = decode_key(level, parent.key, self.config.base_res)
                .expect("table keys are valid");

            // 3x3x3 lattice, index = a + 3b + 9c.
            let mut lattice = [0u32; 27];
            for c in 0..3usize {
                for b in 0..3usize {
                    for a in 0..3usize {
                        let idx = a + 3 * b + 9 * c;
                        let pos = [a, b, c];
                        if pos.iter().all(|&p| p != 1) {
                            let corner = (a / 2) | ((b / 2) << 1) | ((c / 2) << 2);
                            lattice[idx] = parent.corners[corner];
                            continue;
                        }
                        let mut sources: Vec<u32> = (0..8)
                            .filter(|&i| {
                                let o = corner_offset(i);
                                (0..3).all(|ax| pos[ax] == 1 || pos[ax] == 2 * o[ax] as usize)
                            })
                            .map(|i| parent.corners[i])
                            .collect();
                        sources.sort_unstable();
                        if let Some(&id) = shared.get(&sources) {
                            lattice[idx] = id;
                            continue;
                        }
                        accum.iter_mut().for_each(|v| *v = 0.0);
                        let mut observed = true;
                        for &s in &sources {
                            for (ch, acc) in accum.iter_mut().enumerate() {
                                *acc += self.nodes.get(s, ch) as f64;
                            }
                            observed &= self.nodes.is_observed(s);
                        }
                        let inv = 1.0 / sources.len() as f64;
                        for (dst, acc) in row_buf.iter_mut().zip(&accum) {
                            *dst = (acc * inv) as f32;
                        }
                        let id = self.nodes.push(&row_buf, observed);
                        report.new_nodes.push(id);
                        shared.insert(sources, id);
                        lattice[idx] = id;
                    }
                }
            }

            let child_level = level + 1;
            let d = self.config.level_dims(child_level);
            for octant in 0..8 {
                let o = corner_offset(octant);
                let mut corners = [0u32; 8];
                for (i, c) in corners.iter_mut().enumerate() {
                    let co = corner_offset(i);
                    let (a, b, cc) = (o[0] + co[0], o[1] + co[1], o[2] + co[2]);
                    *c = lattice[(a + 3 * b + 9 * cc) as usize];
                }
                let cell = [2 * pcell[0] + o[0], 2 * pcell[1] + o[1], 2 * pcell[2] + o[2]];
                let key = key_unchecked(cell, d[0], d[1]);
                let new_row = self.voxels.push(corners, child_level, key);
                self.levels[child_level as usize].insert(key, new_row);
                report.new_rows.push(new_row);
            }
            self.voxels.active[row as usize] = false;
            report.deactivated.push(row);
        }
        report
    }

    pub fn stats(&self) -> GridStats {
        let mut active_per_level = vec![0usize; self.config.max_levels as usize];
        for row in self.active_rows() {
            active_per_level[self.voxels.level(row) as usize] += 1;
        }
        let node_count = self.nodes.len();
        let voxel_rows = self.voxels.len();
        let index_entries: usize = self.levels.iter().map(LevelIndex::len).sum();
        // values + observed flag; corners + level + active + key; index pairs
        let bytes = node_count * (self.nodes.dim() * 4 + 1)
            + voxel_rows * (8 * 4 + 1 + 1 + 8)
            + index_entries * (8 + 4);
        GridStats {
            active_per_level,
            node_count,
            voxel_rows,
            bytes,
        }
    }

    /// Checks the structural invariants, returning a description of the first
    /// violation.
    pub fn check_integrity(&self) -> std::result::Result<(), String> {
        let n = self.nodes.len() as u32;
        if self.nodes.values.len() != self.nodes.len() * self.nodes.dim() {
            return Err("node value matrix has the wrong size".into());
        }
        for row in 0..self.voxels.len() as u32 {
            if let Some(&c) = self.voxels.corners(row).iter().find(|&&c| c >= n) {
                return Err(format!("row {row} references missing node {c}"));
            }
            let level = self.voxels.level(row);
            let key = self.voxels.key(row);
            match self.levels.get(level as usize).and_then(|l| l.get(key)) {
                Some(r) if r == row => {}
                other => return Err(format!("row {row}: index entry is {other:?}")),
            }
            if !self.voxels.is_active(row) {
                if level + 1 >= self.config.max_levels {
                    return Err(format!("row {row} inactive at the deepest level"));
                }
                let cell = decode_key(level, key, self.config.base_res)
                    .map_err(|e| e.to_string())?;
                for octant in 0..8 {
                    let o = corner_offset(octant);
                    let child = [2 * cell[0] + o[0], 2 * cell[1] + o[1], 2 * cell[2] + o[2]];
                    let k = encode_key(level + 1, child, self.config.base_res)
                        .map_err(|e| e.to_string())?;
                    if self.levels[level as usize + 1].get(k).is_none() {
                        return Err(format!("row {row} is missing child {octant}"));
                    }
                }
            }
        }
        for (l, index) in self.levels.iter().enumerate() {
            for (key, row) in index.entries() {
                if row as usize >= self.voxels.len()
                    || self.voxels.level(row) as usize != l
                    || self.voxels.key(row) != key
                {
                    return Err(format!("level {l} key {key} points to inconsistent row {row}"));
                }
            }
        }
        Ok(())
    }
}
