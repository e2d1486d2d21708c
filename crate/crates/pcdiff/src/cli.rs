//! Command-line surface. Subcommands cover the whole pipeline: synthetic
//! data, map building, training both networks, completion, evaluation, and
//! hyperparameter sweeps. Flags override config-file values which override
//! the built-in defaults.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{self, ScenePair, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::io::config::RunConfig;
use crate::io::report::format_report;
use crate::io::{kitti, model_file, ply};
use crate::metrics;
use crate::model::train::{train, TrainHistory};
use crate::model::ToyNoisePredictor;
use crate::refine::{self, RefineNet};
use crate::rng;
use crate::sampler::{self, SigmaMode};

#[derive(Parser)]
#[command(
    name = "pcdiff",
    version,
    about = "Scene-scale LiDAR point cloud completion by denoising diffusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complete a sparse scan into a dense scene
    Complete(CompleteArgs),
    /// Train the noise-prediction network on scene pairs
    Train(TrainArgs),
    /// Train the refinement/upsampling network
    TrainRefine(TrainRefineArgs),
    /// Compare a predicted cloud against ground truth
    Eval(EvalArgs),
    /// Aggregate posed scans into a dense map
    BuildMap(BuildMapArgs),
    /// Generate synthetic scene pairs
    Synth(SynthArgs),
    /// Train and evaluate across values of one config key
    Sweep(SweepArgs),
}

/// Schedule flags shared by every diffusion-touching subcommand.
#[derive(Args)]
struct ScheduleArgs {
    /// Diffusion step count T (default 1000)
    #[arg(long)]
    t_max: Option<usize>,
    /// First-step noise variance (default 3.5e-5)
    #[arg(long)]
    beta_start: Option<f64>,
    /// Last-step noise variance (default 0.007)
    #[arg(long)]
    beta_end: Option<f64>,
}

impl ScheduleArgs {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(v) = self.t_max {
            config.t_max = v;
        }
        if let Some(v) = self.beta_start {
            config.beta_start = v;
        }
        if let Some(v) = self.beta_end {
            config.beta_end = v;
        }
    }
}

#[derive(Args)]
struct CompleteArgs {
    /// Sparse input scan (PLY)
    #[arg(long)]
    input: PathBuf,
    /// Trained denoiser weights
    #[arg(long)]
    model: PathBuf,
    /// Optional refinement weights; upsamples the completed cloud
    #[arg(long)]
    refine_model: Option<PathBuf>,
    /// Output cloud (binary PLY)
    #[arg(long)]
    out: PathBuf,
    /// key=value config file; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Denoising steps visited (default 50)
    #[arg(long)]
    steps: Option<usize>,
    /// Guidance weight s (default 6.0)
    #[arg(long)]
    guidance: Option<f64>,
    /// Scan copies K seeding the chain (default 10)
    #[arg(long)]
    replicate: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Add the stochastic noise term at each step
    #[arg(long)]
    stochastic: bool,
    /// Step noise scale: std or verbatim
    #[arg(long)]
    sigma_mode: Option<String>,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of scene pairs (*_scan.ply with matching *_gt.ply)
    #[arg(long)]
    data: PathBuf,
    /// Output weights file
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate (default 1e-4)
    #[arg(long)]
    lr: Option<f64>,
    /// Noise-mean regularization weight r (default 5.0)
    #[arg(long)]
    reg_weight: Option<f64>,
    /// Probability of swapping in the null condition (default 0.1)
    #[arg(long)]
    null_prob: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Halve the learning rate every this many epochs
    #[arg(long)]
    lr_halving_period: Option<usize>,
    /// Temporal embedding width (default 96)
    #[arg(long)]
    d_t: Option<usize>,
    /// Condition feature width (default 32)
    #[arg(long)]
    d_c: Option<usize>,
    /// Backbone hidden widths (default 64,64,64,64)
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Condition cloud is downsampled to this many points (default 128)
    #[arg(long)]
    cond_points: Option<usize>,
    /// Write per-epoch loss means to this file
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

impl TrainArgs {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(v) = self.epochs {
            config.train.epochs = v;
        }
        if let Some(v) = self.lr {
            config.train.learning_rate = v;
        }
        if let Some(v) = self.reg_weight {
            config.train.r = v;
        }
        if let Some(v) = self.null_prob {
            config.train.p_null = v;
        }
        if let Some(v) = self.seed {
            config.train.seed = v;
        }
        if let Some(v) = self.batch_size {
            config.train.batch_size = v;
        }
        if let Some(v) = self.weight_decay {
            config.train.weight_decay = v;
        }
        if let Some(v) = self.lr_halving_period {
            config.train.lr_halving_period = v;
        }
        if let Some(v) = self.d_t {
            config.model.d_t = v;
        }
        if let Some(v) = self.d_c {
            config.model.d_c = v;
        }
        if let Some(v) = &self.layers {
            config.model.layer_dims = v.clone();
        }
        if let Some(v) = self.cond_points {
            config.model.n_condition_points = v;
        }
        self.schedule.apply(config);
    }
}

#[derive(Args)]
struct TrainRefineArgs {
    /// Directory of *_gt.ply clouds; inputs are jittered copies
    #[arg(long)]
    data: PathBuf,
    /// Output weights file
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Offsets predicted per point (default 6)
    #[arg(long)]
    kappa: Option<usize>,
    /// Offset bound in meters (default 0.10)
    #[arg(long)]
    max_offset: Option<f64>,
    /// Training jitter sigma in meters (default 0.05)
    #[arg(long)]
    jitter_sigma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden widths (default 64,64)
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainRefineArgs {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(v) = self.kappa {
            config.refine.kappa = v;
        }
        if let Some(v) = self.max_offset {
            config.refine.max_offset = v;
        }
        if let Some(v) = self.jitter_sigma {
            config.refine.jitter_sigma = v;
        }
        if let Some(v) = self.lr {
            config.refine.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            config.refine.epochs = v;
        }
        if let Some(v) = self.batch_size {
            config.refine.batch_size = v;
        }
        if let Some(v) = &self.hidden {
            config.refine.hidden = v.clone();
        }
        if let Some(v) = self.seed {
            config.refine.seed = v;
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted cloud (PLY)
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth cloud (PLY)
    #[arg(long)]
    gt: PathBuf,
    /// Voxel IoU resolutions in meters
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.2,0.1")]
    iou_res: Vec<f64>,
    /// BEV histogram resolution in meters
    #[arg(long, default_value_t = 0.5)]
    jsd_res: f64,
    /// Also write the report to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildMapArgs {
    /// Directory of KITTI .bin scans, aggregated in name order
    #[arg(long)]
    scans: PathBuf,
    /// Pose file, one row-major 3x4 [R|t] per scan line
    #[arg(long)]
    poses: PathBuf,
    /// Directory of .label files matching the scans by name order
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output map (binary PLY)
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Deduplicate by voxel; bare flag uses 0.05 m
    #[arg(long, num_args = 0..=1, default_missing_value = "0.05")]
    dedup: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for scene_NNNN_{gt,scan}.ply pairs
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes
    #[arg(long, default_value_t = 8)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ground plane half-extent in meters
    #[arg(long, default_value_t = 10.0)]
    extent: f64,
    /// Boxes placed per scene
    #[arg(long, default_value_t = 4)]
    boxes: usize,
    /// Dense ground-truth sample count
    #[arg(long, default_value_t = 2000)]
    gt_points: usize,
    /// Scan ray azimuth steps per ring
    #[arg(long, default_value_t = 36)]
    azimuth_steps: usize,
    /// Scan ray rings
    #[arg(long, default_value_t = 6)]
    rings: usize,
    /// Sensor height above the plane in meters
    #[arg(long, default_value_t = 1.2)]
    sensor_height: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// Config key to sweep (hyphens allowed, e.g. reg-weight)
    #[arg(long)]
    param: String,
    /// Comma-separated values to try
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Directory of scene pairs to train and evaluate on
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the table to this file
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    guidance: Option<f64>,
    #[arg(long)]
    replicate: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Backbone hidden widths for the swept models
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Condition cloud size for the swept models
    #[arg(long)]
    cond_points: Option<usize>,
    /// Voxel IoU resolutions for the table
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.2,0.1")]
    iou_res: Vec<f64>,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

/// Binary entry point reading the process arguments.
pub fn cli_main() -> i32 {
    run_from(std::env::args_os())
}

/// Parse and run one invocation; in-process driver for tests. The first
/// element is the program name, as in `std::env::args`.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage/help text and picks the exit code
            // (0 for --help/--version, 2 for usage errors).
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: &Command) -> Result<()> {
    apply_thread_cap()?;
    match command {
        Command::Complete(args) => cmd_complete(args),
        Command::Train(args) => cmd_train(args),
        Command::TrainRefine(args) => cmd_train_refine(args),
        Command::Eval(args) => cmd_eval(args),
        Command::BuildMap(args) => cmd_build_map(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

/// PCDF_THREADS caps internal parallelism; 0 or unset means automatic.
fn apply_thread_cap() -> Result<()> {
    let Some(raw) = std::env::var_os("PCDF_THREADS") else {
        return Ok(());
    };
    let text = raw.to_string_lossy();
    let n: usize = text.trim().parse().map_err(|_| {
        Error::InvalidParameter(format!(
            "PCDF_THREADS must be a non-negative integer, got {text:?}"
        ))
    })?;
    if n == 0 {
        return Ok(());
    }
    // The global pool can only be built once per process; later calls (tests
    // drive run_from repeatedly in-process) keep the first cap.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_sigma_mode(name: &str) -> Result<SigmaMode> {
    match name {
        "std" => Ok(SigmaMode::Std),
        "verbatim" => Ok(SigmaMode::Verbatim),
        _ => Err(Error::InvalidParameter(format!(
            "sigma mode must be std or verbatim, got {name:?}"
        ))),
    }
}

fn cmd_complete(args: &CompleteArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(v) = args.steps {
        config.sampler.steps = v;
    }
    if let Some(v) = args.guidance {
        config.sampler.s = v;
    }
    if let Some(v) = args.replicate {
        config.replicate = v;
    }
    if let Some(v) = args.seed {
        config.sampler.seed = v;
    }
    if args.stochastic {
        config.sampler.stochastic = true;
    }
    if let Some(v) = &args.sigma_mode {
        config.sampler.sigma_mode = parse_sigma_mode(v)?;
    }
    args.schedule.apply(&mut config);

    let schedule = config.schedule()?;
    let model = model_file::read_noise_model(&args.model)?;
    let scan = ply::read_ply(&args.input)?;
    let init =
        sampler::build_initial_noisy(&scan, config.replicate, &schedule, config.sampler.seed)?;
    let completed = sampler::sample(&model, &scan, &init, &schedule, &config.sampler)?;
    let out_cloud = match &args.refine_model {
        Some(path) => {
            let net = model_file::read_refine_net(path)?;
            refine::refine_upsample(&completed, &net)?
        }
        None => completed,
    };
    ply::write_ply(&args.out, &out_cloud)?;
    println!("wrote {} points to {}", out_cloud.len(), args.out.display());
    Ok(())
}

/// Scene pairs on disk: `<stem>_scan.ply` next to `<stem>_gt.ply`.
fn load_scene_pairs(dir: &Path) -> Result<Vec<ScenePair>> {
    let mut scan_paths: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with("_scan.ply"))
        {
            scan_paths.push(path);
        }
    }
    scan_paths.sort();
    if scan_paths.is_empty() {
        return Err(Error::Format(format!(
            "{}: no *_scan.ply files found",
            dir.display()
        )));
    }
    let mut pairs = Vec::with_capacity(scan_paths.len());
    for scan_path in scan_paths {
        let name = scan_path.file_name().unwrap().to_str().unwrap().to_owned();
        let gt_path = scan_path.with_file_name(name.replace("_scan.ply", "_gt.ply"));
        if !gt_path.exists() {
            return Err(Error::Format(format!(
                "{}: missing ground-truth file {}",
                scan_path.display(),
                gt_path.display()
            )));
        }
        pairs.push(ScenePair {
            input: ply::read_ply(&scan_path)?,
            gt: ply::read_ply(&gt_path)?,
            center_pose: RigidPose::identity(),
        });
    }
    Ok(pairs)
}

fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut text = String::from("# epoch diff mean std total\n");
    for (i, loss) in history.epoch_mean.iter().enumerate() {
        text.push_str(&format!(
            "{} {} {} {} {}\n",
            i + 1,
            loss.diff,
            loss.mean,
            loss.std,
            loss.total
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    args.apply(&mut config);

    let pairs = load_scene_pairs(&args.data)?;
    let schedule = config.schedule()?;
    let mut model = ToyNoisePredictor::new(config.model.clone(), config.train.seed)?;
    let history = train(&mut model, &pairs, &schedule, &config.train)?;
    model_file::write_noise_model(&args.out, &model)?;
    for (i, loss) in history.epoch_mean.iter().enumerate() {
        println!(
            "epoch {}: diff={:.6} mean={:.6} std={:.6} total={:.6}",
            i + 1,
            loss.diff,
            loss.mean,
            loss.std,
            loss.total
        );
    }
    if let Some(path) = &args.history {
        write_history(path, &history)?;
    }
    println!(
        "trained on {} pairs for {} steps; wrote {}",
        pairs.len(),
        history.steps,
        args.out.display()
    );
    Ok(())
}

fn cmd_train_refine(args: &TrainRefineArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    args.apply(&mut config);

    let mut gt_paths: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(&args.data)? {
        let path = entry?.path();
        if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with("_gt.ply"))
        {
            gt_paths.push(path);
        }
    }
    gt_paths.sort();
    if gt_paths.is_empty() {
        return Err(Error::Format(format!(
            "{}: no *_gt.ply files found",
            args.data.display()
        )));
    }
    // Inputs are jittered copies of the targets, one derived seed per scene.
    let mut dataset = Vec::with_capacity(gt_paths.len());
    for (i, path) in gt_paths.iter().enumerate() {
        let gt = ply::read_ply(path)?;
        let input = refine::jitter(
            &gt,
            config.refine.jitter_sigma,
            config.refine.seed + i as u64,
        )?;
        dataset.push((input, gt));
    }
    let mut net = RefineNet::new(&config.refine, &mut rng::seeded(config.refine.seed))?;
    let history = refine::train_refine(&mut net, &dataset, &config.refine)?;
    model_file::write_refine_net(&args.out, &net)?;
    for (i, loss) in history.epoch_mean.iter().enumerate() {
        println!("epoch {}: refine_loss={loss:.6}", i + 1);
    }
    println!(
        "trained on {} clouds; wrote {}",
        dataset.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let pred = ply::read_ply(&args.pred)?;
    let gt = ply::read_ply(&args.gt)?;
    let report = metrics::evaluate(&pred, &gt, args.jsd_res, &args.iou_res)?;
    let text = format_report(&report);
    print!("{text}");
    if let Some(path) = &args.out {
        fs::write(path, &text)?;
    }
    Ok(())
}

/// Files in `dir` with the given suffix, sorted by name.
fn sorted_files(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(suffix))
        {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn cmd_build_map(args: &BuildMapArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(res) = args.dedup {
        config.pipeline.dedup_resolution = if res == 0.0 { None } else { Some(res) };
    }

    let scan_paths = sorted_files(&args.scans, ".bin")?;
    if scan_paths.is_empty() {
        return Err(Error::Format(format!(
            "{}: no .bin scans found",
            args.scans.display()
        )));
    }
    let poses = kitti::read_poses(&args.poses)?;
    if poses.len() != scan_paths.len() {
        return Err(Error::SizeMismatch {
            what: "poses per scan",
            expected: scan_paths.len(),
            got: poses.len(),
        });
    }
    let mut scans = Vec::with_capacity(scan_paths.len());
    for (path, pose) in scan_paths.iter().zip(poses) {
        scans.push((kitti::read_kitti_bin(path)?, pose));
    }

    let labels = match &args.labels {
        Some(dir) => {
            let label_paths = sorted_files(dir, ".label")?;
            if label_paths.len() != scan_paths.len() {
                return Err(Error::SizeMismatch {
                    what: "label files per scan",
                    expected: scan_paths.len(),
                    got: label_paths.len(),
                });
            }
            let mut all = Vec::with_capacity(label_paths.len());
            for path in &label_paths {
                all.push(kitti::read_labels(path)?);
            }
            Some(all)
        }
        None => None,
    };

    let map = dataset::build_map(&scans, labels.as_deref(), &config.pipeline)?;
    ply::write_ply(&args.out, &map)?;
    println!(
        "aggregated {} scans into {} map points; wrote {}",
        scans.len(),
        map.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = SceneSpec {
        extent: args.extent,
        n_boxes: args.boxes,
        gt_points: args.gt_points,
        azimuth_steps: args.azimuth_steps,
        rings: args.rings,
        sensor_height: args.sensor_height,
    };
    if args.scenes == 0 {
        return Err(Error::InvalidParameter("scene count must be >= 1".into()));
    }
    fs::create_dir_all(&args.out)?;
    for i in 0..args.scenes {
        let (gt, scan) = dataset::generate_synthetic_scene(&spec, args.seed + i as u64)?;
        ply::write_ply(&args.out.join(format!("scene_{i:04}_gt.ply")), &gt)?;
        ply::write_ply(&args.out.join(format!("scene_{i:04}_scan.ply")), &scan)?;
    }
    println!(
        "wrote {} scene pairs to {}",
        args.scenes,
        args.out.display()
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut base = load_config(&args.config)?;
    if let Some(v) = args.epochs {
        base.train.epochs = v;
    }
    if let Some(v) = args.lr {
        base.train.learning_rate = v;
    }
    if let Some(v) = args.steps {
        base.sampler.steps = v;
    }
    if let Some(v) = args.guidance {
        base.sampler.s = v;
    }
    if let Some(v) = args.replicate {
        base.replicate = v;
    }
    if let Some(v) = args.seed {
        base.train.seed = v;
        base.sampler.seed = v;
        base.refine.seed = v;
    }
    if let Some(v) = &args.layers {
        base.model.layer_dims = v.clone();
    }
    if let Some(v) = args.cond_points {
        base.model.n_condition_points = v;
    }
    args.schedule.apply(&mut base);

    let pairs = load_scene_pairs(&args.data)?;
    let key = args.param.replace('-', "_");

    let mut table = String::new();
    table.push_str(&format!("param={key}\n"));
    table.push_str("value cd jsd_bev");
    for res in &args.iou_res {
        table.push_str(&format!(" iou@{res}"));
    }
    table.push('\n');
    for value in &args.values {
        let mut config = base.clone();
        config.apply(&key, value)?;
        let schedule = config.schedule()?;
        let mut model = ToyNoisePredictor::new(config.model.clone(), config.train.seed)?;
        train(&mut model, &pairs, &schedule, &config.train)?;

        let mut sums = MetricSums::new(args.iou_res.len());
        for pair in &pairs {
            let init = sampler::build_initial_noisy(
                &pair.input,
                config.replicate,
                &schedule,
                config.sampler.seed,
            )?;
            let completed =
                sampler::sample(&model, &pair.input, &init, &schedule, &config.sampler)?;
            let report = metrics::evaluate(&completed, &pair.gt, 0.5, &args.iou_res)?;
            sums.add(&report);
        }
        let row = sums.mean_row(value, pairs.len());
        table.push_str(&row);
        table.push('\n');
    }
    print!("{table}");
    if let Some(path) = &args.out {
        fs::write(path, &table)?;
    }
    Ok(())
}

/// Running totals for averaging metric reports over scenes.
struct MetricSums {
    cd: f64,
    jsd: f64,
    iou: Vec<f64>,
}

impl MetricSums {
    fn new(n_res: usize) -> MetricSums {
        MetricSums {
            cd: 0.0,
            jsd: 0.0,
            iou: vec![0.0; n_res],
        }
    }

    fn add(&mut self, report: &metrics::MetricReport) {
        self.cd += report.cd;
        self.jsd += report.jsd_bev;
        for (slot, (_, v)) in self.iou.iter_mut().zip(&report.iou) {
            *slot += v;
        }
    }

    fn mean_row(&self, value: &str, n: usize) -> String {
        let n = n as f64;
        let mut row = format!("{value} {} {}", self.cd / n, self.jsd / n);
        for v in &self.iou {
            row.push_str(&format!(" {}", v / n));
        }
        row
    }
}
