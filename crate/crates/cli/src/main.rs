//! `sparse-occ`: command-line front end for scene generation, rendering,
//! sampling, splatting, fusion and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sparse_occ::camera::CameraModel;
use sparse_occ::config::PipelineConfig;
use sparse_occ::fusion::GaussianMemoryBank;
use sparse_occ::gaussian::{Frame, GaussianPrimitive, GaussianSet, HeuristicAttributes};
use sparse_occ::io;
use sparse_occ::metrics::{confusion, frustum_mask, iou_miou};
use sparse_occ::pipeline::{frame_gaussians, run_streaming, FrameInput};
use sparse_occ::scene::{
    default_intrinsics, monocular_camera, oracle_occupancy, orbit_cameras, render_depth, RoomParams, SyntheticScene,
};
use sparse_occ::splat::{splat, GridSpec};

#[derive(Parser, Debug)]
#[command(name = "sparse-occ", version, about = "Sparse Gaussian semantic occupancy from depth and semantics")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for scene generation and camera jitter.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override one configuration key, e.g. `--set samples_per_ray=8`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a furnished room and optionally its ground-truth grid.
    GenScene {
        #[arg(long)]
        out: PathBuf,
        /// Oracle occupancy on the configured grid.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Render analytic depth and classes of a scene.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// `mono` (seeded) or `orbit:I/N`.
        #[arg(long, default_value = "mono")]
        view: String,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        classes: PathBuf,
        #[arg(long)]
        camera: PathBuf,
    },
    /// Turn a depth frame into world-frame Gaussians (before pruning).
    Sample {
        #[command(flatten)]
        frame: FrameFiles,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop Gaussians whose opacity is below `prune_tau`.
    Prune {
        #[arg(long)]
        gaussians: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Splat world-frame Gaussians onto the configured grid.
    Splat {
        #[arg(long)]
        gaussians: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use a grid covering this scene's room instead of the configured one.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Fuse frames in order and splat the memory bank.
    Stream {
        /// `DEPTH CLASSES CAMERA`, repeated once per frame in temporal order.
        #[arg(long = "frame", num_args = 3, value_names = ["DEPTH", "CLASSES", "CAMERA"], required = true)]
        frames: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write the final memory bank as a Gaussian set.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Use a grid covering this scene's room instead of the configured one.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// IoU / mIoU of a predicted grid against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Restrict to the union of these cameras' frusta.
        #[arg(long = "camera")]
        cameras: Vec<PathBuf>,
    },
    /// Time hashed radius search against a linear scan.
    BenchIndex {
        #[arg(long, default_value_t = 50_000)]
        bank: usize,
        #[arg(long, default_value_t = 5_000)]
        queries: usize,
    },
}

#[derive(Args, Debug)]
struct FrameFiles {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    classes: PathBuf,
    #[arg(long)]
    camera: PathBuf,
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    for assignment in &common.overrides {
        cfg.apply_override(assignment)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn load_frame(depth: &Path, classes: &Path, camera: &Path) -> Result<FrameInput> {
    Ok(FrameInput {
        depth: io::load_depth_map(depth).with_context(|| format!("reading {}", depth.display()))?,
        classes: io::load_class_map(classes).with_context(|| format!("reading {}", classes.display()))?,
        camera: read_json(camera)?,
    })
}

fn load_world_set(path: &Path) -> Result<GaussianSet> {
    io::load_gaussian_set(path, Frame::World).with_context(|| format!("reading {}", path.display()))
}

fn scene_grid(scene: &SyntheticScene, cfg: &PipelineConfig) -> Result<GridSpec> {
    Ok(GridSpec::covering(
        Point3::from(scene.room_min),
        Point3::from(scene.room_max),
        cfg.grid.voxel_size,
        cfg.grid.num_classes,
    )?)
}

fn target_grid(scene: Option<&PathBuf>, cfg: &PipelineConfig) -> Result<GridSpec> {
    match scene {
        Some(path) => scene_grid(&read_json(path)?, cfg),
        None => Ok(cfg.grid.clone()),
    }
}

fn parse_view(view: &str, scene: &SyntheticScene, seed: u64) -> Result<CameraModel> {
    if view == "mono" {
        return Ok(monocular_camera(scene, default_intrinsics(), seed)?);
    }
    let Some(rest) = view.strip_prefix("orbit:") else {
        bail!("unknown view {view:?}, expected `mono` or `orbit:I/N`");
    };
    let (i, n) = rest
        .split_once('/')
        .with_context(|| format!("orbit view {view:?} must look like orbit:I/N"))?;
    let i: usize = i.parse().with_context(|| format!("bad orbit index {i:?}"))?;
    let n: usize = n.parse().with_context(|| format!("bad orbit count {n:?}"))?;
    ensure!(n > 0 && i < n, "orbit index {i} out of range for {n} views");
    Ok(orbit_cameras(scene, default_intrinsics(), n)?.swap_remove(i))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        ensure!(n > 0, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = load_config(&cli.common)?;
    let seed = cli.common.seed;

    match cli.command {
        Command::GenScene { out, truth } => {
            let scene = SyntheticScene::generate(seed, &RoomParams::default())?;
            write_json(&out, &scene)?;
            println!("boxes = {}", scene.boxes.len());
            if let Some(path) = truth {
                let grid = oracle_occupancy(&scene, &cfg.grid)?;
                io::save_occupancy_grid(&path, &grid)?;
                println!("occupied = {}", grid.occupied_count());
            }
        }
        Command::Render {
            scene,
            view,
            depth,
            classes,
            camera,
        } => {
            let scene: SyntheticScene = read_json(&scene)?;
            let cam = parse_view(&view, &scene, seed)?;
            let (d, c) = render_depth(&scene, &cam)?;
            io::save_depth_map(&depth, &d)?;
            io::save_class_map(&classes, &c)?;
            write_json(&camera, &cam)?;
            println!("valid_pixels = {}", d.valid_count());
        }
        Command::Sample { frame, out } => {
            let f = load_frame(&frame.depth, &frame.classes, &frame.camera)?;
            let provider = HeuristicAttributes::new(cfg.attributes, cfg.grid.num_classes);
            let set = frame_gaussians(&f.depth, &f.classes, &f.camera, &cfg, &provider)?.to_world(f.camera.pose())?;
            io::save_gaussian_set(&out, &set)?;
            println!("gaussians = {}", set.len());
        }
        Command::Prune { gaussians, out } => {
            let set = load_world_set(&gaussians)?;
            let kept = set.prune(cfg.prune_tau)?;
            io::save_gaussian_set(&out, &kept)?;
            println!("kept = {}", kept.len());
            println!("pruned = {}", set.len() - kept.len());
        }
        Command::Splat { gaussians, out, scene } => {
            let set = load_world_set(&gaussians)?;
            let spec = target_grid(scene.as_ref(), &cfg)?;
            let grid = splat(&set, &spec, cfg.theta_occ)?;
            io::save_occupancy_grid(&out, &grid)?;
            println!("occupied = {}", grid.occupied_count());
        }
        Command::Stream {
            frames,
            out,
            bank,
            scene,
        } => {
            let inputs = frames
                .chunks(3)
                .map(|f| load_frame(&f[0], &f[1], &f[2]))
                .collect::<Result<Vec<_>>>()?;
            let spec = target_grid(scene.as_ref(), &cfg)?;
            let result = run_streaming(&inputs, &cfg, &spec)?;
            for (i, s) in result.stats.iter().enumerate() {
                println!("frame_{i} = matched {} inserted {} anchors {}", s.matched, s.inserted, s.anchors_updated);
            }
            println!("bank = {}", result.bank.len());
            println!("occupied = {}", result.grid.occupied_count());
            io::save_occupancy_grid(&out, &result.grid)?;
            if let Some(path) = bank {
                io::save_gaussian_set(&path, result.bank.gaussians())?;
            }
        }
        Command::Eval { pred, truth, cameras } => {
            let pred = io::load_occupancy_grid(&pred).with_context(|| format!("reading {}", pred.display()))?;
            let truth = io::load_occupancy_grid(&truth).with_context(|| format!("reading {}", truth.display()))?;
            let mask = if cameras.is_empty() {
                None
            } else {
                let mut union = vec![false; pred.spec().num_voxels()];
                for path in &cameras {
                    let cam: CameraModel = read_json(path)?;
                    for (u, m) in union.iter_mut().zip(frustum_mask(pred.spec(), &cam, cfg.near, cfg.far)?) {
                        *u |= m;
                    }
                }
                Some(union)
            };
            let report = iou_miou(&confusion(&pred, &truth, mask.as_deref())?);
            print!("{report}");
        }
        Command::BenchIndex { bank, queries } => bench_index(&cfg, seed, bank, queries),
    }
    Ok(())
}

fn bench_index(cfg: &PipelineConfig, seed: u64, bank_size: usize, queries: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = &cfg.grid;
    let hi = spec.max_corner();
    let point = |rng: &mut ChaCha8Rng| {
        Point3::new(
            rng.random_range(spec.origin.x..hi.x),
            rng.random_range(spec.origin.y..hi.y),
            rng.random_range(spec.origin.z..hi.z),
        )
    };
    let members: Vec<GaussianPrimitive> = (0..bank_size)
        .map(|_| {
            let mean = point(&mut rng);
            GaussianPrimitive::new(mean, Vector3::repeat(0.02), UnitQuaternion::identity(), 0.5, vec![0.0; spec.num_classes])
                .expect("valid primitive")
        })
        .collect();
    let set = GaussianSet::from_vec(Frame::World, spec.num_classes, members).expect("consistent classes");
    let bank = GaussianMemoryBank::from_set(set, cfg.fusion.epsilon).expect("world frame");
    let qs: Vec<Point3<f64>> = (0..queries).map(|_| point(&mut rng)).collect();
    let eps = cfg.fusion.epsilon;

    let start = Instant::now();
    let hashed: usize = qs.iter().map(|q| bank.radius_neighbors(q, eps).len()).sum();
    let hash_time = start.elapsed();
    let start = Instant::now();
    let scanned: usize = qs
        .iter()
        .map(|q| bank.gaussians().iter().filter(|g| (g.mean() - q).norm() <= eps).count())
        .sum();
    let scan_time = start.elapsed();
    println!("bank = {bank_size}");
    println!("queries = {queries}");
    println!("neighbors = {hashed}");
    println!("agree = {}", hashed == scanned);
    println!("hash_ms = {:.3}", hash_time.as_secs_f64() * 1e3);
    println!("scan_ms = {:.3}", scan_time.as_secs_f64() * 1e3);
    println!("speedup = {:.1}", scan_time.as_secs_f64() / hash_time.as_secs_f64().max(1e-9));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
