//! Build a two-level grid, locate points, split a few voxels and round-trip
//! the result through a snapshot.

use dynvox::grid::{read_snapshot, write_snapshot};
use dynvox::{Aabb, DynamicGrid, GridConfig, Vec3};

fn main() -> dynvox::Result<()> {
    let bbox = Aabb::new(Vec3::repeat(-1.0), Vec3::repeat(1.0));
    let mut grid = DynamicGrid::new(GridConfig::new(bbox, [4, 4, 4], 3))?;
    println!("level 0: {:?}", grid.stats());

    let p = Vec3::new(0.3, -0.2, 0.7);
    let v = grid.trace(&p)?;
    println!("{p:?} lies in row {} at level {}", v.row, v.level);

    // split the voxel holding p, then the child holding p
    for _ in 0..2 {
        let row = grid.trace(&p)?.row;
        let report = grid.subdivide(&[row]);
        println!("split row {row}: {} new nodes, {} new rows", report.new_nodes.len(), report.new_rows.len());
    }
    let v = grid.trace(&p)?;
    println!("now in row {} at level {} spanning {:?}..{:?}", v.row, v.level, v.min, v.max());
    println!("{:?}", grid.stats());
    grid.check_integrity().expect("consistent grid");

    let mut bytes = Vec::new();
    write_snapshot(&grid, &mut bytes)?;
    let back = read_snapshot(bytes.as_slice())?;
    println!("snapshot: {} bytes, {} nodes restored", bytes.len(), back.nodes().len());
    Ok(())
}
