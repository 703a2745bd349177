//! Command-line front end: `synth`, `recon`, `mesh` and `eval`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::geom::{Aabb, Vec3};
use crate::grid::{read_snapshot, write_snapshot, DynamicGrid, GridConfig};
use crate::mesh::{evaluate, marching_cubes, read_mesh, sample_analytic, sample_volume, write_mesh, MeshMetrics, MetricOptions};
use crate::scene_io::{estimate_bbox, load_dataset, save_dataset, BboxOptions, Dataset, SceneFile};
use crate::train::{TrainConfig, Trainer};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const GRID_FILE: &str = "grid.dvx";
pub const LOG_FILE: &str = "train.log";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const GT_MESH_FILE: &str = "gt_mesh.ply";

#[derive(Parser, Debug)]
#[command(name = "dynvox", version, about = "Dynamic voxel grid surface reconstruction from RGB-D frames")]
pub struct Cli {
    /// Seed for every random choice; recorded in the manifest.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (1 = deterministic single-threaded mode, 0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render an analytic scene into an RGB-D dataset plus ground-truth mesh.
    Synth(SynthArgs),
    /// Reconstruct a grid from a dataset directory.
    Recon(ReconArgs),
    /// Extract a mesh from a grid snapshot.
    Mesh(MeshArgs),
    /// Compare a mesh against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Scene description (TOML); camera and trajectory sections are optional.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the number of orbit poses.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Lattice cells along the longest axis for the ground-truth mesh.
    #[arg(long, default_value_t = 256)]
    pub gt_res: u64,
}

#[derive(Args, Debug, Clone)]
pub struct ReconArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration (TOML with optional [train] and [grid] tables).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the iteration count; drops subdivision steps past the end.
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct MeshArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// Output paths; format by extension (.ply or .obj). Repeatable.
    #[arg(long, required = true)]
    pub out: Vec<PathBuf>,
    /// Lattice cells per axis; defaults to the finest grid resolution.
    #[arg(long, num_args = 1..=3, value_delimiter = ',')]
    pub res: Option<Vec<u64>>,
    /// Sample at the level-0 resolution instead of the finest one.
    #[arg(long, conflicts_with = "res")]
    pub base_res: bool,
    /// Keep surfaces in regions never reached by depth supervision.
    #[arg(long)]
    pub no_mask: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Also write the report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// F-score distance threshold in meters.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    /// Surface samples per square meter.
    #[arg(long, default_value_t = 1e4)]
    pub density: f64,
    /// IoU occupancy cell size in meters.
    #[arg(long, default_value_t = 0.05)]
    pub iou_cell: f64,
}

/// How the reconstruction grid is laid out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    /// Explicit level-0 resolution. When absent, `base_voxels` is split over
    /// the axes in proportion to the box extents.
    pub base_res: Option<[u32; 3]>,
    pub base_voxels: u64,
    pub max_levels: u32,
    /// Explicit box `[min, max]`; estimated from depth when absent.
    pub bbox: Option<[[f64; 3]; 2]>,
    /// Box margin in meters; twice the truncation distance when absent.
    pub bbox_margin: Option<f64>,
    pub bbox_stride: u32,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            base_res: None,
            base_voxels: 64 * 64 * 64,
            max_levels: 3,
            bbox: None,
            bbox_margin: None,
            bbox_stride: 2,
        }
    }
}

/// Level-0 resolution with about `voxels` cells, proportional to the extents.
pub fn proportional_res(bbox: &Aabb, voxels: u64) -> [u32; 3] {
    let e = bbox.extent();
    let unit = (e.x * e.y * e.z / voxels.max(1) as f64).cbrt();
    [0, 1, 2].map(|a| ((e[a] / unit).round() as u32).max(1))
}

impl GridSettings {
    pub fn build(&self, dataset: &Dataset, truncation: f64) -> Result<DynamicGrid> {
        let bbox = match self.bbox {
            Some([lo, hi]) => Aabb::new(Vec3::from(lo), Vec3::from(hi)),
            None => estimate_bbox(
                dataset,
                &BboxOptions {
                    stride: self.bbox_stride,
                    margin: self.bbox_margin.unwrap_or(2.0 * truncation),
                    ..Default::default()
                },
            )?,
        };
        let res = self.base_res.unwrap_or_else(|| proportional_res(&bbox, self.base_voxels));
        DynamicGrid::new(GridConfig::new(bbox, res, self.max_levels))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub grid: GridSettings,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.train.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Everything needed to repeat a command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seconds: f64,
    pub config: Option<RunConfig>,
    pub stats: toml::Table,
}

impl RunManifest {
    fn new(command: &str, seed: u64, threads: usize) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            threads,
            ..Default::default()
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))
    }
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

/// Mesh of the analytic scene surface on a lattice with `res` cells along
/// the longest axis of its padded bounds.
pub fn ground_truth_mesh(scene: &crate::scene_io::AnalyticScene, res: u64) -> crate::mesh::Mesh {
    let b = scene.bounds().expanded(0.05);
    let e = b.extent();
    let h = e.max() / res.max(2) as f64;
    let cells = [0, 1, 2].map(|a| ((e[a] / h).ceil() as u64).max(2));
    let b = Aabb::new(b.min(), b.min() + Vec3::from_fn(|a, _| cells[a] as f64 * h));
    marching_cubes(&sample_analytic(|p| scene.sdf(p), &b, cells), 0.0)
}

pub fn cmd_synth(args: &SynthArgs, seed: u64, threads: usize) -> Result<RunManifest> {
    let start = Instant::now();
    let mut scene = SceneFile::load(&args.scene)?;
    if let Some(n) = args.frames {
        if n == 0 {
            return Err(Error::Config("--frames must be positive".into()));
        }
        scene.trajectory.frames = n;
    }
    let dataset = scene.render();
    save_dataset(&args.out, &dataset)?;
    let gt = ground_truth_mesh(&scene.scene, args.gt_res);
    let gt_path = args.out.join(GT_MESH_FILE);
    write_mesh(&gt, &gt_path)?;
    fs::write(args.out.join("scene.toml"), scene.to_toml())?;

    let mut m = RunManifest::new("synth", seed, threads);
    m.inputs.push(show(&args.scene));
    m.outputs = vec![show(&args.out), show(&gt_path)];
    m.stats.insert("frames".into(), (dataset.frames.len() as i64).into());
    m.stats.insert("gt_vertices".into(), (gt.vertices.len() as i64).into());
    m.stats.insert("gt_faces".into(), (gt.faces.len() as i64).into());
    m.seconds = start.elapsed().as_secs_f64();
    m.write(&args.out.join(MANIFEST_FILE))?;
    println!("synth frames={} gt_faces={} out={}", dataset.frames.len(), gt.faces.len(), args.out.display());
    Ok(m)
}

pub fn cmd_recon(args: &ReconArgs, seed: u64, threads: usize) -> Result<RunManifest> {
    let start = Instant::now();
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.train.seed = seed;
    cfg.train.threads = threads;
    if let Some(n) = args.iters {
        cfg.train.iters = n;
        cfg.train.subdivision_steps.retain(|&s| s < n);
    }
    cfg.train.validate()?;
    let dataset = load_dataset(&args.data)?;
    let grid = cfg.grid.build(&dataset, cfg.train.truncation)?;
    fs::create_dir_all(&args.out)?;
    println!(
        "recon frames={} bbox={:?}..{:?} base_res={:?} max_levels={}",
        dataset.frames.len(),
        grid.bbox().min,
        grid.bbox().max,
        grid.config().base_res,
        grid.config().max_levels
    );

    let log_path = args.out.join(LOG_FILE);
    let mut log = Tee(BufWriter::new(File::create(&log_path)?));
    let outcome = Trainer::new(&dataset, grid, cfg.train.clone())?.run(Some(&mut log))?;
    log.flush()?;

    let grid_path = args.out.join(GRID_FILE);
    write_snapshot(&outcome.grid, BufWriter::new(File::create(&grid_path)?))?;

    let mut m = RunManifest::new("recon", seed, threads);
    m.inputs.push(show(&args.data));
    if let Some(c) = &args.config {
        m.inputs.push(show(c));
    }
    m.outputs = vec![show(&grid_path), show(&log_path)];
    m.config = Some(cfg);
    let stats = outcome.grid.stats();
    if let Some(last) = outcome.history.last() {
        m.stats.insert("final_loss".into(), last.loss.total.into());
        m.stats.insert("final_rgb".into(), last.loss.rgb.into());
        m.stats.insert("final_fs".into(), last.loss.fs.into());
        m.stats.insert("final_sdf".into(), last.loss.sdf.into());
    }
    m.stats.insert("sharpness".into(), outcome.sharpness.b().into());
    m.stats.insert("nodes".into(), (stats.node_count as i64).into());
    m.stats.insert("active_voxels".into(), (stats.active_total() as i64).into());
    m.stats.insert("bytes".into(), (stats.bytes as i64).into());
    let max_change = outcome.history.subdivisions.iter().map(|e| e.max_field_change).fold(0.0, f64::max);
    m.stats.insert("subdivisions".into(), (outcome.history.subdivisions.len() as i64).into());
    m.stats.insert("max_field_change".into(), max_change.into());
    m.seconds = start.elapsed().as_secs_f64();
    m.write(&args.out.join(MANIFEST_FILE))?;
    println!("recon done nodes={} active_voxels={} seconds={:.1}", stats.node_count, stats.active_total(), m.seconds);
    Ok(m)
}

/// Writes to stdout as well as the wrapped file.
struct Tee<W: Write>(W);

impl<W: Write> Write for Tee<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stdout().write_all(buf)?;
        self.0.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        std::io::stdout().flush()?;
        self.0.flush()
    }
}

pub fn cmd_mesh(args: &MeshArgs, seed: u64, threads: usize) -> Result<RunManifest> {
    let start = Instant::now();
    let file = File::open(&args.grid).map_err(|e| Error::dataset(&args.grid, e.to_string()))?;
    let grid = read_snapshot(std::io::BufReader::new(file))?;
    let cells = match (&args.res, args.base_res) {
        (Some(r), _) => {
            let r = match r.as_slice() {
                [n] => [*n; 3],
                [x, y, z] => [*x, *y, *z],
                _ => return Err(Error::Config("--res takes one value or three".into())),
            };
            if r.iter().any(|&v| v < 1) {
                return Err(Error::Config("--res must be positive".into()));
            }
            Some(r)
        }
        (None, true) => Some(grid.config().base_res.map(|v| v as u64)),
        (None, false) => None,
    };
    let vol = sample_volume(&grid, cells, !args.no_mask);
    let mesh = marching_cubes(&vol, 0.0);
    if mesh.is_empty() {
        log::warn!("grid has no zero crossing; writing an empty mesh");
        eprintln!("warning: extracted mesh is empty");
    }
    for out in &args.out {
        write_mesh(&mesh, out)?;
    }
    let mut m = RunManifest::new("mesh", seed, threads);
    m.inputs.push(show(&args.grid));
    m.outputs = args.out.iter().map(|p| show(p)).collect();
    m.stats.insert("vertices".into(), (mesh.vertices.len() as i64).into());
    m.stats.insert("faces".into(), (mesh.faces.len() as i64).into());
    m.stats.insert("lattice".into(), format!("{:?}", vol.dims).into());
    m.seconds = start.elapsed().as_secs_f64();
    m.write(&sidecar(&args.out[0]))?;
    println!("mesh vertices={} faces={} lattice={:?}", mesh.vertices.len(), mesh.faces.len(), vol.dims);
    Ok(m)
}

fn sidecar(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

/// Report keys, in output order.
pub const REPORT_KEYS: [&str; 9] = [
    "chamfer_l1",
    "fscore",
    "precision",
    "recall",
    "normal_consistency",
    "iou",
    "threshold",
    "pred_points",
    "gt_points",
];

/// `key = value` lines in [`REPORT_KEYS`] order.
pub fn format_report(r: &MeshMetrics, threshold: f64) -> String {
    let vals = [
        format!("{}", r.chamfer),
        format!("{}", r.fscore),
        format!("{}", r.precision),
        format!("{}", r.recall),
        format!("{}", r.normal_consistency),
        format!("{}", r.iou),
        format!("{}", threshold),
        format!("{}", r.pred_samples),
        format!("{}", r.gt_samples),
    ];
    REPORT_KEYS
        .iter()
        .zip(vals)
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

pub fn cmd_eval(args: &EvalArgs, seed: u64, threads: usize) -> Result<(MeshMetrics, RunManifest)> {
    let start = Instant::now();
    let load = |p: &Path| read_mesh(p).map_err(|e| Error::dataset(p, e.to_string()));
    let pred = load(&args.pred)?;
    let gt = load(&args.gt)?;
    let opts = MetricOptions {
        threshold: args.threshold,
        density: args.density,
        iou_cell: args.iou_cell,
        seed,
    };
    let r = evaluate(&pred, &gt, &opts);
    let report = format_report(&r, args.threshold);
    print!("{report}");
    let mut m = RunManifest::new("eval", seed, threads);
    m.inputs = vec![show(&args.pred), show(&args.gt)];
    if let Some(p) = &args.report {
        fs::write(p, &report)?;
        m.outputs.push(show(p));
        m.seconds = start.elapsed().as_secs_f64();
        m.write(&sidecar(p))?;
    }
    Ok((r, m))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numerical { .. } => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (seed, threads) = (cli.seed, cli.threads);
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a, seed, threads).map(|_| ()),
        Command::Recon(a) => cmd_recon(a, seed, threads).map(|_| ()),
        Command::Mesh(a) => cmd_mesh(a, seed, threads).map(|_| ()),
        Command::Eval(a) => cmd_eval(a, seed, threads).map(|_| ()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
