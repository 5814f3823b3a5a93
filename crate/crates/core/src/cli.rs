//! Command-line front end. All relative paths resolve against `--out`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::arch::{build_floorplan, ArchError, Floorplan, FloorplanSpec};
use crate::cgan::{
    fine_tune, loss_csv, train, DiscriminatorConfig, GanError, GeneratorConfig, ModelCheckpoint, SkipMode, StepLosses,
    TrainConfig, TrainEvent,
};
use crate::dataset::{build_dataset, split, write_atomic, Dataset, DatasetError, DatasetSpec, Sample};
use crate::eval::{
    ablation_compare, explore, per_pixel_accuracy, topk_overlap, EvalError, Goal, HoldoutItem, Objective, Region,
    Variant, DEFAULT_TOLERANCE,
};
use crate::netlist::{generate_synthetic, parse_netlist, Netlist, NetlistError, SyntheticParams};
use crate::placer::{anneal, AnnealSchedule, PlaceAlgorithm, PlaceError, SweepGrid};
use crate::raster::{
    self, decode_heatmap, render_connectivity, render_placement, ColorScheme, ImagePlane, RasterError, RasterLayout,
};
use crate::router::{congestion_score, RouteConfig, RouteError, ScoreMode};

#[derive(Debug, Parser)]
#[command(name = "routecast", version, about = "FPGA routing congestion forecasting from placement images")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Working directory; relative paths resolve against it.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Image size in pixels.
    #[arg(long, global = true)]
    pub w: Option<usize>,
    /// Worker threads for data generation and kernels.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key=value` overrides for the training configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a floorplan description.
    GenArch(GenArchArgs),
    /// Write a seeded synthetic netlist.
    GenNetlist(GenNetlistArgs),
    /// Sweep placements, route and rasterize them into a dataset.
    Dataset(DatasetArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Continue training a checkpoint on a few items.
    FineTune(FineTuneArgs),
    /// Predict heat maps.
    Infer(InferArgs),
    /// Accuracy and top-k ranking of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Rank placements by predicted congestion in a region.
    Explore(ExploreArgs),
    /// Forecast congestion on snapshots of a running anneal.
    Watch(WatchArgs),
    /// Train and compare generator/loss variants.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenArchArgs {
    #[arg(long, default_value_t = 8)]
    pub cols: usize,
    #[arg(long, default_value_t = 8)]
    pub rows: usize,
    #[arg(long, default_value_t = 2)]
    pub mem_col: usize,
    #[arg(long, default_value_t = 6)]
    pub mult_col: usize,
    #[arg(long, default_value_t = 16)]
    pub capacity: u32,
    #[arg(long, default_value_t = 8)]
    pub ports: u32,
    #[arg(long, default_value = "arch.json")]
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenNetlistArgs {
    #[arg(long, default_value_t = 40)]
    pub clbs: usize,
    #[arg(long, default_value_t = 16)]
    pub inputs: usize,
    #[arg(long, default_value_t = 8)]
    pub outputs: usize,
    #[arg(long, default_value_t = 4)]
    pub mems: usize,
    #[arg(long, default_value_t = 4)]
    pub mults: usize,
    #[arg(long, default_value_t = 3.0)]
    pub fanout: f64,
    #[arg(long, default_value_t = 0.6)]
    pub rent: f64,
    #[arg(long, default_value_t = 3.6)]
    pub nets_per_clb: f64,
    #[arg(long, default_value = "design.net")]
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 20.0)]
    pub t_init_factor: f64,
    #[arg(long, default_value_t = 0.005)]
    pub exit_t: f64,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long, default_value = "arch.json")]
    pub arch: PathBuf,
    #[arg(long, default_value = "design.net")]
    pub netlist: PathBuf,
    #[arg(long, default_value = "dataset")]
    pub dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = (1..=10).collect::<Vec<u64>>())]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.7, 0.8, 0.9, 0.95])]
    pub alpha_ts: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 10.0])]
    pub inner_nums: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![PlaceAlgorithm::BoundingBox])]
    pub algorithms: Vec<PlaceAlgorithm>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, default_value_t = 50)]
    pub route_iters: usize,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// First encoder width; defaults by image size.
    #[arg(long)]
    pub base_width: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, default_value = "all")]
    pub skip_mode: SkipMode,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
}

#[derive(Debug, Args, Clone)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train on the adversarial loss alone.
    #[arg(long)]
    pub no_l1: bool,
    /// Feed luma instead of RGB.
    #[arg(long)]
    pub grayscale: bool,
    /// Extra `key=value` overrides applied after `--config`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Keep overflowed items in the training set.
    #[arg(long)]
    pub include_overflow: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "dataset")]
    pub data: PathBuf,
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "losses.csv")]
    pub losses: PathBuf,
    /// Fraction of trailing items held out from training.
    #[arg(long, default_value_t = 0.0)]
    pub val_frac: f64,
    /// Rewrite the checkpoint every N epochs (0: only at the end).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct FineTuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "dataset")]
    pub data: PathBuf,
    /// Number of items to fine-tune on, taken from the start of the dataset.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Explicit item ids instead of the first `k`.
    #[arg(long, value_delimiter = ',')]
    pub items: Vec<String>,
    #[arg(long, default_value = "tuned.ckpt")]
    pub output: PathBuf,
    #[arg(long, default_value = "tuned_losses.csv")]
    pub losses: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "dataset")]
    pub data: PathBuf,
    /// Item ids; every item when empty.
    #[arg(long, value_delimiter = ',')]
    pub items: Vec<String>,
    #[arg(long, default_value = "pred")]
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "dataset")]
    pub data: PathBuf,
    /// Evaluate only the trailing fraction of items (1.0: all).
    #[arg(long, default_value_t = 1.0)]
    pub val_frac: f64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tau: f64,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value = "mean")]
    pub score: ScoreMode,
    #[arg(long, default_value = "eval")]
    pub report: PathBuf,
    #[arg(long)]
    pub include_overflow: bool,
}

#[derive(Debug, Args)]
pub struct ExploreArgs {
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "dataset")]
    pub data: PathBuf,
    #[arg(long, default_value = "min")]
    pub goal: Goal,
    /// whole, upper, lower, left, right, right-third or x0,y0,x1,y1.
    #[arg(long, default_value = "whole")]
    pub region: Region,
    #[arg(long, default_value = "mean")]
    pub score: ScoreMode,
    #[arg(long, default_value = "explore")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct WatchArgs {
    #[arg(long, default_value = "arch.json")]
    pub arch: PathBuf,
    #[arg(long, default_value = "design.net")]
    pub netlist: PathBuf,
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    /// Accepted moves between frames.
    #[arg(long, default_value_t = 100)]
    pub every: usize,
    #[arg(long, default_value_t = 0.8)]
    pub alpha_t: f64,
    #[arg(long, default_value_t = 1.0)]
    pub inner_num: f64,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, default_value = "frames")]
    pub frames: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, default_value = "dataset")]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3])]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = AblationVariant::all().to_vec())]
    pub variants: Vec<AblationVariant>,
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    #[arg(long, default_value = "ablation")]
    pub dir: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
}

/// Generator/loss combinations compared by `ablate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AblationVariant {
    SkipAllL1,
    NoL1,
    SkipSingle,
    Grayscale,
}

impl AblationVariant {
    pub fn all() -> [AblationVariant; 3] {
        [AblationVariant::SkipAllL1, AblationVariant::NoL1, AblationVariant::SkipSingle]
    }

    pub fn apply(&self, g: &mut GeneratorConfig, t: &mut TrainConfig) {
        match self {
            AblationVariant::SkipAllL1 => {}
            AblationVariant::NoL1 => t.use_l1 = false,
            AblationVariant::SkipSingle => g.skip_mode = SkipMode::Single,
            AblationVariant::Grayscale => {
                t.grayscale = true;
                g.in_channels = 2;
            }
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationVariant::SkipAllL1 => "skip-all-l1",
            AblationVariant::NoL1 => "no-l1",
            AblationVariant::SkipSingle => "skip-single",
            AblationVariant::Grayscale => "grayscale",
        })
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "skip-all-l1" => Ok(AblationVariant::SkipAllL1),
            "no-l1" => Ok(AblationVariant::NoL1),
            "skip-single" => Ok(AblationVariant::SkipSingle),
            "grayscale" => Ok(AblationVariant::Grayscale),
            other => Err(format!("unknown variant '{other}'")),
        }
    }
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        if e.is_io() {
            CliError::io(e.to_string())
        } else {
            CliError::validation(e.to_string())
        }
    }
}

impl From<GanError> for CliError {
    fn from(e: GanError) -> Self {
        match e {
            GanError::Io(_) | GanError::Raster(RasterError::Io(_)) => CliError::io(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::Io(_) => CliError::io(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Gan(g) => g.into(),
            EvalError::Raster(r) => r.into(),
            other => CliError::validation(other.to_string()),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::validation(e.to_string())
            }
        }
    )*};
}

validation_from!(ArchError, NetlistError, PlaceError, RouteError);

type CliResult<T = ()> = Result<T, CliError>;

struct Ctx {
    global: Global,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.global.out.join(p)
        }
    }

    fn read_text(&self, p: &Path) -> CliResult<String> {
        let full = self.path(p);
        fs::read_to_string(&full).map_err(|e| CliError::io(format!("{}: {e}", full.display())))
    }

    fn write(&self, p: &Path, bytes: &[u8]) -> CliResult {
        let full = self.path(p);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
        }
        Ok(write_atomic(&full, bytes)?)
    }

    fn mkdir(&self, p: &Path) -> CliResult<PathBuf> {
        let full = self.path(p);
        fs::create_dir_all(&full).map_err(|e| CliError::io(format!("{}: {e}", full.display())))?;
        Ok(full)
    }

    fn floorplan(&self, p: &Path) -> CliResult<Floorplan> {
        Ok(Floorplan::from_json(&self.read_text(p)?)?)
    }

    fn netlist(&self, p: &Path) -> CliResult<Netlist> {
        Ok(parse_netlist(&self.read_text(p)?)?)
    }

    fn dataset(&self, p: &Path) -> CliResult<Dataset> {
        let ds = Dataset::open(&self.path(p))?;
        if let Some(w) = self.global.w {
            if w != ds.layout.w {
                return Err(CliError::validation(format!("--w {w} but the dataset uses {}", ds.layout.w)));
            }
        }
        Ok(ds)
    }

    fn checkpoint(&self, p: &Path) -> CliResult<ModelCheckpoint> {
        Ok(ModelCheckpoint::load(&self.path(p))?)
    }

    fn train_config(&self, flags: &TrainFlags) -> CliResult<TrainConfig> {
        let mut t = TrainConfig {
            seed: self.global.seed,
            ..TrainConfig::default()
        };
        if let Some(c) = &self.global.config {
            t.apply_overrides(&self.read_text(c)?)?;
        }
        for kv in &flags.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::validation(format!("--set expects key=value, got '{kv}'")))?;
            t.set(k.trim(), v.trim())?;
        }
        if let Some(e) = flags.epochs {
            t.epochs = e;
        }
        if flags.no_l1 {
            t.use_l1 = false;
        }
        if flags.grayscale {
            t.grayscale = true;
        }
        t.validate()?;
        Ok(t)
    }
}

fn model_configs(m: &ModelArgs, w: usize, t: &TrainConfig) -> (GeneratorConfig, DiscriminatorConfig) {
    let mut g = GeneratorConfig::for_image(w);
    if let Some(b) = m.base_width {
        g.base_width = b;
    }
    if let Some(d) = m.depth {
        g.depth = d;
    }
    g.skip_mode = m.skip_mode;
    g.dropout_rate = m.dropout;
    g.in_channels = if t.grayscale { 2 } else { 4 };
    let d = DiscriminatorConfig::for_generator(&g);
    (g, d)
}

fn training_samples(ds: &Dataset, include_overflow: bool) -> CliResult<Vec<Sample>> {
    let s = ds.samples(include_overflow)?;
    if s.is_empty() {
        return Err(CliError::validation("no usable items in the dataset"));
    }
    Ok(s)
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    (serde_json::to_string_pretty(v).unwrap() + "\n").into_bytes()
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> CliResult
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        CliError {
            code,
            message: e.to_string(),
        }
    })?;
    execute(cli)
}

pub fn execute(cli: Cli) -> CliResult {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::validation("--threads must be positive"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx { global: cli.global };
    match cli.command {
        Command::GenArch(a) => gen_arch(&ctx, a),
        Command::GenNetlist(a) => gen_netlist(&ctx, a),
        Command::Dataset(a) => cmd_dataset(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::FineTune(a) => cmd_fine_tune(&ctx, a),
        Command::Infer(a) => cmd_infer(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Explore(a) => cmd_explore(&ctx, a),
        Command::Watch(a) => cmd_watch(&ctx, a),
        Command::Ablate(a) => cmd_ablate(&ctx, a),
    }
}

fn gen_arch(ctx: &Ctx, a: GenArchArgs) -> CliResult {
    let fp = build_floorplan(&FloorplanSpec {
        cols: a.cols,
        rows: a.rows,
        mem_col: a.mem_col,
        mult_col: a.mult_col,
        channel_capacity: a.capacity,
        io_ports_per_pad: a.ports,
    })?;
    ctx.write(&a.file, fp.to_json().as_bytes())
}

fn gen_netlist(ctx: &Ctx, a: GenNetlistArgs) -> CliResult {
    let n = generate_synthetic(
        &SyntheticParams {
            n_clb: a.clbs,
            n_io_in: a.inputs,
            n_io_out: a.outputs,
            n_mem: a.mems,
            n_mult: a.mults,
            avg_fanout: a.fanout,
            rent_exponent: a.rent,
            nets_per_clb: a.nets_per_clb,
        },
        ctx.global.seed,
    )?;
    ctx.write(&a.file, n.serialize().as_bytes())
}

fn base_schedule(s: &ScheduleArgs) -> AnnealSchedule {
    AnnealSchedule {
        t_init_factor: s.t_init_factor,
        exit_t: s.exit_t,
        ..AnnealSchedule::default()
    }
}

fn cmd_dataset(ctx: &Ctx, a: DatasetArgs) -> CliResult {
    let fp = ctx.floorplan(&a.arch)?;
    let netlist = ctx.netlist(&a.netlist)?;
    let spec = DatasetSpec {
        grid: SweepGrid {
            seeds: a.seeds,
            alpha_ts: a.alpha_ts,
            inner_nums: a.inner_nums,
            algorithms: a.algorithms,
        },
        base_schedule: base_schedule(&a.schedule),
        route: RouteConfig {
            max_iters: a.route_iters,
            seed: ctx.global.seed,
            ..RouteConfig::default()
        },
        w: ctx.global.w.unwrap_or(64),
    };
    let (m, stats) = build_dataset(&fp, &netlist, &spec, &ctx.path(&a.dir))?;
    println!(
        "{} items ({} generated, {} reused, {} overflowed)",
        m.items.len(),
        stats.generated,
        stats.reused,
        stats.overflowed
    );
    Ok(())
}

/// Runs training, writing the loss log and periodic checkpoints.
fn run_training(
    ctx: &Ctx,
    pairs: &[crate::cgan::Pair],
    start: Option<&ModelCheckpoint>,
    cfgs: (&GeneratorConfig, &DiscriminatorConfig, &TrainConfig),
    checkpoint: &Path,
    checkpoint_every: usize,
    manifest_hash: &str,
) -> CliResult<(ModelCheckpoint, Vec<(u64, StepLosses)>)> {
    let mut log = Vec::new();
    let mut io_err = None;
    let mut cb = |e: TrainEvent<'_>| match e {
        TrainEvent::Step { step, losses } => log.push((step, *losses)),
        TrainEvent::Epoch { epoch, model } => {
            if checkpoint_every > 0 && epoch % checkpoint_every as u64 == 0 && io_err.is_none() {
                let mut m = model.clone();
                m.manifest_hash = manifest_hash.to_string();
                io_err = ctx.write(checkpoint, &m.to_bytes()).err();
            }
        }
    };
    let mut model = match start {
        Some(m) => fine_tune(m, pairs, cfgs.2, &mut cb)?,
        None => train(pairs, cfgs.0, cfgs.1, cfgs.2, &mut cb)?,
    };
    if let Some(e) = io_err {
        return Err(e);
    }
    model.manifest_hash = manifest_hash.to_string();
    Ok((model, log))
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> CliResult {
    let ds = ctx.dataset(&a.data)?;
    let t = ctx.train_config(&a.flags)?;
    let (g, d) = model_configs(&a.model, ds.layout.w, &t);
    let samples = training_samples(&ds, a.flags.include_overflow)?;
    let (train_set, _) = split(&samples, a.val_frac);
    if train_set.is_empty() {
        return Err(CliError::validation("validation split leaves no training items"));
    }
    let pairs = train_set.iter().map(|s| s.pair(&t)).collect::<Result<Vec<_>, _>>()?;
    let (model, log) = run_training(ctx, &pairs, None, (&g, &d, &t), &a.checkpoint, a.checkpoint_every, &ds.manifest_hash)?;
    ctx.write(&a.checkpoint, &model.to_bytes())?;
    ctx.write(&a.losses, loss_csv(&log).as_bytes())?;
    println!("trained {} steps on {} items", model.step, pairs.len());
    Ok(())
}

fn cmd_fine_tune(ctx: &Ctx, a: FineTuneArgs) -> CliResult {
    let ds = ctx.dataset(&a.data)?;
    let base = ctx.checkpoint(&a.checkpoint)?;
    let mut t = ctx.train_config(&a.flags)?;
    t.grayscale = base.t_cfg.grayscale;
    let chosen: Vec<Sample> = if a.items.is_empty() {
        training_samples(&ds, a.flags.include_overflow)?.into_iter().take(a.k).collect()
    } else {
        a.items
            .iter()
            .map(|id| {
                let item = ds.item(id).ok_or_else(|| CliError::validation(format!("no item '{id}'")))?;
                Ok(ds.load(item)?)
            })
            .collect::<CliResult<_>>()?
    };
    let pairs = chosen.iter().map(|s| s.pair(&t)).collect::<Result<Vec<_>, _>>()?;
    let (model, log) = run_training(ctx, &pairs, Some(&base), (&base.g_cfg, &base.d_cfg, &t), &a.output, 0, &ds.manifest_hash)?;
    ctx.write(&a.output, &model.to_bytes())?;
    ctx.write(&a.losses, loss_csv(&log).as_bytes())?;
    println!("fine-tuned on {} items", pairs.len());
    Ok(())
}

fn selected(ds: &Dataset, ids: &[String]) -> CliResult<Vec<Sample>> {
    if ids.is_empty() {
        return Ok(ds.samples(true)?);
    }
    ids.iter()
        .map(|id| {
            let item = ds.item(id).ok_or_else(|| CliError::validation(format!("no item '{id}'")))?;
            Ok(ds.load(item)?)
        })
        .collect()
}

fn predict(model: &ModelCheckpoint, s: &Sample) -> CliResult<ImagePlane> {
    Ok(model.infer_image(&s.pair(&model.t_cfg)?.x)?)
}

fn cmd_infer(ctx: &Ctx, a: InferArgs) -> CliResult {
    let ds = ctx.dataset(&a.data)?;
    let model = ctx.checkpoint(&a.checkpoint)?;
    let dir = ctx.mkdir(&a.dir)?;
    let samples = selected(&ds, &a.items)?;
    for s in &samples {
        raster::write_png(&dir.join(format!("{}.png", s.id)), &predict(&model, s)?)?;
    }
    println!("wrote {} predictions", samples.len());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    accuracy: crate::eval::AccuracyReport,
    ranking: Option<crate::eval::RankingReport>,
    items: Vec<EvalRow>,
}

#[derive(Serialize)]
struct EvalRow {
    id: String,
    accuracy: f64,
    predicted_score: f64,
    true_score: f64,
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> CliResult {
    let ds = ctx.dataset(&a.data)?;
    let model = ctx.checkpoint(&a.checkpoint)?;
    let scheme = ColorScheme::default();
    let all = ds.samples(a.include_overflow)?;
    let (_, subset) = split(&all, a.val_frac);
    if subset.is_empty() {
        return Err(CliError::validation("nothing to evaluate"));
    }
    let mut preds = Vec::new();
    let (mut pred_scores, mut true_scores) = (BTreeMap::new(), BTreeMap::new());
    for s in &subset {
        let img = predict(&model, s)?;
        let u = decode_heatmap(&img, &ds.layout, &scheme)?.utilization;
        pred_scores.insert(s.id.clone(), congestion_score(&u, None, a.score)? as f64);
        true_scores.insert(s.id.clone(), congestion_score(&s.util, None, a.score)? as f64);
        preds.push((img, s.util.clone()));
    }
    let accuracy = per_pixel_accuracy(&preds, &ds.layout, &scheme, a.tau)?;
    let ranking = (subset.len() >= a.k).then(|| topk_overlap(&pred_scores, &true_scores, a.k)).transpose()?;
    let items: Vec<EvalRow> = subset
        .iter()
        .zip(&accuracy.per_image)
        .map(|(s, &acc)| EvalRow {
            id: s.id.clone(),
            accuracy: acc,
            predicted_score: pred_scores[&s.id],
            true_score: true_scores[&s.id],
        })
        .collect();
    let mut csv = String::from("id,accuracy,predicted_score,true_score\n");
    for r in &items {
        csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.id, r.accuracy, r.predicted_score, r.true_score));
    }
    println!(
        "accuracy {:.4} (all-zero baseline {:.4}) over {} items{}",
        accuracy.per_pixel_acc,
        accuracy.baseline_acc,
        subset.len(),
        ranking.as_ref().map_or(String::new(), |r| format!(", top{} {:.2}", r.k, r.overlap))
    );
    let report = EvalReport { accuracy, ranking, items };
    ctx.write(&a.report.with_extension("json"), &json(&report))?;
    ctx.write(&a.report.with_extension("csv"), csv.as_bytes())
}

fn cmd_explore(ctx: &Ctx, a: ExploreArgs) -> CliResult {
    let ds = ctx.dataset(&a.data)?;
    let model = ctx.checkpoint(&a.checkpoint)?;
    let scheme = ColorScheme::default();
    let items = ds
        .samples(true)?
        .iter()
        .map(|s| Ok((s.id.clone(), predict(&model, s)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let objective = Objective {
        goal: a.goal,
        region: a.region,
        score: a.score,
    };
    let ranked = explore(&items, &objective, &ds.floorplan, &ds.layout, &scheme)?;
    let mut csv = String::from("rank,id,score\n");
    for (i, r) in ranked.iter().enumerate() {
        csv.push_str(&format!("{},{},{:.6}\n", i + 1, r.id, r.score));
    }
    if let Some(best) = ranked.first() {
        println!("best {} with score {:.4}", best.id, best.score);
    }
    ctx.write(&a.report.with_extension("csv"), csv.as_bytes())?;
    ctx.write(&a.report.with_extension("json"), &json(&ranked))
}

/// `[placement | forecast]` side by side.
pub fn side_by_side(left: &ImagePlane, right: &ImagePlane) -> Result<ImagePlane, RasterError> {
    if left.height() != right.height() || left.channels() != right.channels() {
        return Err(RasterError::DimMismatch("frame halves differ".into()));
    }
    let (h, c) = (left.height(), left.channels());
    let (wl, wr) = (left.width(), right.width());
    let mut data = Vec::with_capacity(h * (wl + wr) * c);
    for y in 0..h {
        data.extend_from_slice(&left.data()[y * wl * c..(y + 1) * wl * c]);
        data.extend_from_slice(&right.data()[y * wr * c..(y + 1) * wr * c]);
    }
    ImagePlane::from_vec(h, wl + wr, c, data)
}

fn cmd_watch(ctx: &Ctx, a: WatchArgs) -> CliResult {
    let fp = ctx.floorplan(&a.arch)?;
    let netlist = ctx.netlist(&a.netlist)?;
    let model = ctx.checkpoint(&a.checkpoint)?;
    if a.every == 0 {
        return Err(CliError::validation("--every must be positive"));
    }
    let layout = RasterLayout::fit(&fp, model.image_size)?;
    if let Some(w) = ctx.global.w {
        if w != model.image_size {
            return Err(CliError::validation(format!("--w {w} but the checkpoint uses {}", model.image_size)));
        }
    }
    let scheme = ColorScheme::default();
    let schedule = AnnealSchedule {
        seed: ctx.global.seed,
        alpha_t: a.alpha_t,
        inner_num: a.inner_num,
        ..base_schedule(&a.schedule)
    };
    let result = anneal(&netlist, &fp, &schedule, a.every)?;
    let dir = ctx.mkdir(&a.frames)?;
    for (i, p) in result.snapshots.iter().enumerate() {
        let place = render_placement(&fp, p, &layout, &scheme)?;
        let connect = render_connectivity(&netlist, p, &layout)?;
        let x = crate::cgan::model_input(&place, &connect, model.t_cfg.connect_scale, model.t_cfg.grayscale)?;
        let forecast = model.infer_image(&x)?;
        raster::write_png(&dir.join(format!("frame_{i:05}.png")), &side_by_side(&place, &forecast)?)?;
    }
    println!("wrote {} frames", result.snapshots.len());
    Ok(())
}

#[derive(Serialize)]
struct AblationSummary {
    report: crate::eval::AblationReport,
    median_val_l1: BTreeMap<String, f64>,
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn cmd_ablate(ctx: &Ctx, a: AblateArgs) -> CliResult {
    let ds = ctx.dataset(&a.data)?;
    let base_t = ctx.train_config(&a.flags)?;
    if a.seeds.is_empty() || a.variants.is_empty() {
        return Err(CliError::validation("need at least one seed and one variant"));
    }
    let samples = training_samples(&ds, a.flags.include_overflow)?;
    let (train_set, val_set) = split(&samples, a.val_frac);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CliError::validation("ablation needs both training and validation items"));
    }
    ctx.mkdir(&a.dir)?;
    let dir = &a.dir;
    let mut runs = Vec::new();
    for v in &a.variants {
        for &seed in &a.seeds {
            let mut t = TrainConfig { seed, ..base_t.clone() };
            let (mut g, _) = model_configs(&a.model, ds.layout.w, &t);
            v.apply(&mut g, &mut t);
            let d = DiscriminatorConfig::for_generator(&g);
            let pairs = train_set.iter().map(|s| s.pair(&t)).collect::<Result<Vec<_>, _>>()?;
            let ckpt = dir.join(format!("{v}_s{seed}.ckpt"));
            let (model, log) = run_training(ctx, &pairs, None, (&g, &d, &t), &ckpt, 0, &ds.manifest_hash)?;
            ctx.write(&ckpt, &model.to_bytes())?;
            ctx.write(&dir.join(format!("losses_{v}_s{seed}.csv")), loss_csv(&log).as_bytes())?;
            let holdout = val_set
                .iter()
                .map(|s| {
                    Ok(HoldoutItem {
                        x: s.pair(&t)?.x,
                        truth_img: s.route.clone(),
                        truth_util: s.util.clone(),
                    })
                })
                .collect::<Result<Vec<_>, DatasetError>>()?;
            runs.push((format!("{v}/s{seed}"), v.to_string(), model, log, holdout));
        }
    }
    let scheme = ColorScheme::default();
    let mut rows = Vec::new();
    for (name, _, model, log, holdout) in &runs {
        let r = ablation_compare(
            &[Variant {
                name: name.clone(),
                checkpoint: model,
                losses: log,
            }],
            holdout,
            &ds.layout,
            &scheme,
            DEFAULT_TOLERANCE,
        )?;
        rows.extend(r.rows);
    }
    let report = crate::eval::AblationReport {
        tolerance: DEFAULT_TOLERANCE,
        rows,
    };
    let mut by_variant: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((_, v, ..), row) in runs.iter().zip(&report.rows) {
        by_variant.entry(v.clone()).or_default().push(row.val_l1);
    }
    let median_val_l1: BTreeMap<String, f64> = by_variant.into_iter().map(|(k, mut v)| (k, median(&mut v))).collect();
    for (k, m) in &median_val_l1 {
        println!("{k}: median validation L1 {m:.5}");
    }
    ctx.write(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    ctx.write(&dir.join("report.json"), &json(&AblationSummary { report, median_val_l1 }))
}
