//! `seaice`: every pipeline stage as a subcommand, plus `pipeline` and
//! `benchmark`. Exit codes: 0 success, 1 validation error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seaice_core::calibrate::{
    apply_scaling, binarize, fit_analytical_scaling, saturation_fraction, DEFAULT_Q_HI,
    DEFAULT_Q_LO, DEFAULT_SATURATION_EPS, DEFAULT_THRESHOLD,
};
use seaice_core::ingest::{normalize_scene, ChannelSpecList, DEFAULT_SPEC};
use seaice_core::labels::{read_labels, write_labels};
use seaice_core::metrics::{scene_report, write_pgm};
use seaice_core::pipeline::{
    benchmark, run_pipeline, tiled_inference, Demo, PipelineConfig, SceneSource, DEFAULT_DEMO_SIZE,
    DEFAULT_SEED,
};
use seaice_core::raster::{read_raster, read_rf32, read_scene, write_raster, write_scene};
use seaice_core::regularize::{blur, BlurSpec, DEFAULT_SIGMA};
use seaice_core::synth::{generate, SynthSpec};
use seaice_core::tiling::{stitch, PlanSpec, TilePlan, DEFAULT_STRIDE, DEFAULT_WINDOW};
use seaice_core::weaksup::{
    train_toy, write_trace, LabeledScene, ToyModel, TrainConfig, DEFAULT_BATCH, DEFAULT_EPOCHS,
    DEFAULT_LAMBDA, DEFAULT_LR, DEFAULT_PATCH, DEFAULT_STEPS_PER_EPOCH,
};
use seaice_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "seaice",
    version,
    about = "Weakly supervised sea-ice segmentation post-processing"
)]
struct Cli {
    /// Worker threads for tiling, blur and calibration.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene with truth mask and polygon labels.
    Synth(SynthArgs),
    /// Clip and standardize every channel of a scene.
    Normalize(NormalizeArgs),
    /// Stitch tiles (or infer them with a model) into a logit map.
    Stitch(StitchArgs),
    /// Gaussian-blur a logit map.
    Blur(BlurArgs),
    /// Fit percentile scaling and map logits to probabilities.
    Calibrate(CalibrateArgs),
    /// Threshold probabilities into a binary mask.
    Binarize(BinarizeArgs),
    /// Per-polygon concentration report for a mask.
    Metrics(MetricsArgs),
    /// Train the toy convolution model on polygon labels.
    TrainToy(TrainToyArgs),
    /// Run every stage in order, writing all intermediate artifacts.
    Pipeline(PipelineArgs),
    /// Run the pipeline twice and print per-stage timings.
    Benchmark(PipelineArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Leads,
    Floes,
    Summer,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Preset::Leads)]
    preset: Preset,
    #[arg(long, default_value_t = DEFAULT_DEMO_SIZE)]
    width: u32,
    #[arg(long, default_value_t = DEFAULT_DEMO_SIZE)]
    height: u32,
    /// Run seed; the generator uses the same derived sub-seed as `pipeline`.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Directory for scene.rf32, truth.rf32 and labels.plbl.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct NormalizeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Per-channel clip ranges, `NAME:LO:HI,...`, in file channel order.
    #[arg(long, default_value = DEFAULT_SPEC)]
    spec: String,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct StitchArgs {
    /// RF32 stack with one window x window channel per tile, in plan order.
    #[arg(long, conflicts_with_all = ["model", "scene"], required_unless_present = "model")]
    tiles: Option<PathBuf>,
    /// Scene width (with --tiles).
    #[arg(long, requires = "tiles")]
    width: Option<u32>,
    /// Scene height (with --tiles).
    #[arg(long, requires = "tiles")]
    height: Option<u32>,
    /// Toy model to infer every tile with (requires --scene).
    #[arg(long, requires = "scene")]
    model: Option<PathBuf>,
    /// Normalized scene (with --model).
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: u32,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: u32,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct BlurArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_Q_LO)]
    q_lo: f64,
    #[arg(long, default_value_t = DEFAULT_Q_HI)]
    q_hi: f64,
    #[arg(long)]
    output: PathBuf,
    /// Write the fitted temperature and bias here.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Also write the probabilities as an 8-bit PGM.
    #[arg(long)]
    export_pgm: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BinarizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Truth mask for pixel accuracy.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the mask as an 8-bit PGM.
    #[arg(long)]
    export_pgm: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_STEPS_PER_EPOCH)]
    steps_per_epoch: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_PATCH)]
    patch_size: u32,
    #[arg(long, default_value_t = DEFAULT_LR)]
    lr: f64,
    /// Weight of the binarization term.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    /// Disable random rotations and flips.
    #[arg(long)]
    no_augment: bool,
    /// Start from an all-zero model instead of the label-prior bias.
    #[arg(long)]
    zero_init: bool,
}

impl TrainFlags {
    fn config(&self, seed: u64, workers: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            batch_size: self.batch_size,
            patch_size: self.patch_size,
            lr: self.lr,
            lambda: self.lambda,
            seed,
            augment: !self.no_augment,
            init_bias: !self.zero_init,
            workers,
        }
    }
}

#[derive(Args, Debug)]
struct TrainToyArgs {
    /// Normalized scene.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    /// Run seed; training uses the same derived sub-seed as `pipeline`.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    model_out: PathBuf,
    /// Per-epoch loss trace as CSV.
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Synthetic demo scene (ignored when --scene is given).
    #[arg(long, default_value = "leads")]
    demo: Demo,
    #[arg(long, default_value_t = DEFAULT_DEMO_SIZE)]
    width: u32,
    #[arg(long, default_value_t = DEFAULT_DEMO_SIZE)]
    height: u32,
    /// Raw scene instead of a demo (requires --labels).
    #[arg(long, requires = "labels")]
    scene: Option<PathBuf>,
    #[arg(long, requires = "scene")]
    labels: Option<PathBuf>,
    #[arg(long, requires = "scene")]
    truth: Option<PathBuf>,
    /// Pretrained toy model; skips training.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for all artifacts.
    #[arg(long, default_value = "seaice-out")]
    out_dir: PathBuf,
    #[arg(long, default_value = DEFAULT_SPEC)]
    normalize: String,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: u32,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: u32,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = DEFAULT_Q_LO)]
    q_lo: f64,
    #[arg(long, default_value_t = DEFAULT_Q_HI)]
    q_hi: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Also write probs.pgm and mask.pgm.
    #[arg(long)]
    export_pgm: bool,
}

impl PipelineArgs {
    fn config(&self, workers: usize) -> PipelineConfig {
        let source = match (&self.scene, &self.labels) {
            (Some(scene), Some(labels)) => SceneSource::Files {
                scene: scene.clone(),
                labels: labels.clone(),
                truth: self.truth.clone(),
            },
            _ => SceneSource::Demo {
                demo: self.demo,
                width: self.width,
                height: self.height,
            },
        };
        PipelineConfig {
            source,
            out_dir: Some(self.out_dir.clone()),
            model: self.model.clone(),
            normalize: self.normalize.clone(),
            plan: PlanSpec {
                window: self.window,
                stride: self.stride,
            },
            sigma: self.sigma,
            q_lo: self.q_lo,
            q_hi: self.q_hi,
            threshold: self.threshold,
            train: self.train.config(DEFAULT_SEED, workers),
            seed: self.seed,
            workers,
            export_pgm: self.export_pgm,
        }
    }
}

fn check_threads(threads: usize) -> Result<usize> {
    if threads == 0 {
        return Err(Error::Config(vec!["threads must be >= 1".into()]));
    }
    Ok(threads)
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let seed = PipelineConfig {
        seed: a.seed,
        ..PipelineConfig::default()
    }
    .stage_seed("synth");
    let spec = match a.preset {
        Preset::Leads => SynthSpec::leads(a.width, a.height, seed),
        Preset::Floes => SynthSpec::floes(a.width, a.height, seed),
        Preset::Summer => SynthSpec::summer(a.width, a.height, seed),
    };
    let t = generate(&spec)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    write_scene(&t.scene, &a.out_dir.join("scene.rf32"))?;
    write_raster(&t.truth_mask, &a.out_dir.join("truth.rf32"))?;
    write_labels(&t.labels, &a.out_dir.join("labels.plbl"))?;
    println!(
        "{}x{} scene, channels {}, ice fraction {:.4}, {} polygons",
        a.width,
        a.height,
        t.scene.names().join(","),
        t.truth_mask.mean(),
        t.labels.polygons().len()
    );
    Ok(())
}

fn run_normalize(a: &NormalizeArgs, workers: usize) -> Result<()> {
    let specs: ChannelSpecList = a.spec.parse()?;
    let names: Vec<&str> = specs.0.iter().map(|s| s.name.as_str()).collect();
    let rasters = read_rf32(&a.input)?;
    if rasters.len() != names.len() {
        return Err(Error::Config(vec![format!(
            "spec lists {} channels, {} has {}",
            names.len(),
            a.input.display(),
            rasters.len()
        )]));
    }
    let scene = read_scene(&a.input, Some(&names))?;
    let (normalized, report) = normalize_scene(&scene, &specs, workers)?;
    write_scene(&normalized, &a.output)?;
    print!("{}", report.to_text());
    Ok(())
}

fn run_stitch(a: &StitchArgs, workers: usize) -> Result<()> {
    let logits = match (&a.tiles, &a.model, &a.scene) {
        (Some(tiles), _, _) => {
            let (Some(w), Some(h)) = (a.width, a.height) else {
                return Err(Error::Config(vec![
                    "--tiles needs --width and --height".into()
                ]));
            };
            let plan = TilePlan::from_spec(
                w,
                h,
                PlanSpec {
                    window: a.window,
                    stride: a.stride,
                },
            )?;
            stitch(&read_rf32(tiles)?, &plan, workers)?
        }
        (None, Some(model), Some(scene)) => {
            let scene = read_scene(scene, None)?;
            let plan = TilePlan::from_spec(
                scene.width(),
                scene.height(),
                PlanSpec {
                    window: a.window,
                    stride: a.stride,
                },
            )?;
            tiled_inference(&ToyModel::read(model)?, &scene, &plan, workers)?
        }
        _ => {
            return Err(Error::Config(vec![
                "give --tiles or --model with --scene".into()
            ]))
        }
    };
    write_raster(&logits, &a.output)?;
    println!("logits {}x{}", logits.width(), logits.height());
    Ok(())
}

fn run_blur(a: &BlurArgs, workers: usize) -> Result<()> {
    let spec = BlurSpec::new(a.sigma)?;
    let smoothed = blur(&read_raster(&a.input)?, &spec, workers);
    write_raster(&smoothed, &a.output)
}

fn run_calibrate(a: &CalibrateArgs, workers: usize) -> Result<()> {
    let logits = read_raster(&a.input)?;
    let fit = fit_analytical_scaling(&logits, a.q_lo, a.q_hi)?;
    if fit.degenerate {
        log::warn!("degenerate logit range; temperature clamped");
    }
    let probs = apply_scaling(&logits, &fit.params, workers);
    write_raster(&probs, &a.output)?;
    if let Some(p) = &a.params {
        fit.params.write(p)?;
    }
    if let Some(p) = &a.export_pgm {
        write_pgm(&probs, p)?;
    }
    println!(
        "{} (z_lo {}, z_hi {}), saturation {:.4}",
        fit.params,
        fit.percentiles.z_lo,
        fit.percentiles.z_hi,
        saturation_fraction(&probs, DEFAULT_SATURATION_EPS)
    );
    Ok(())
}

fn run_binarize(a: &BinarizeArgs) -> Result<()> {
    let mask = binarize(&read_raster(&a.input)?, a.threshold)?;
    write_raster(&mask, &a.output)?;
    println!("ice fraction {:.4}", mask.mean());
    Ok(())
}

fn run_metrics(a: &MetricsArgs) -> Result<()> {
    let mask = read_raster(&a.mask)?;
    let labels = read_labels(&a.labels)?;
    let truth = a.truth.as_deref().map(read_raster).transpose()?;
    let report = scene_report(&mask, &labels, truth.as_ref())?;
    if let Some(p) = &a.csv {
        report.write_csv(p)?;
    }
    if let Some(p) = &a.export_pgm {
        write_pgm(&mask, p)?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn run_train(a: &TrainToyArgs, workers: usize) -> Result<()> {
    let seed = PipelineConfig {
        seed: a.seed,
        ..PipelineConfig::default()
    }
    .stage_seed("train");
    let cfg = a.train.config(seed, workers);
    let scenes = [LabeledScene {
        scene: read_scene(&a.scene, None)?,
        labels: read_labels(&a.labels)?,
    }];
    let outcome = train_toy(&scenes, &cfg)?;
    outcome.model.write(&a.model_out)?;
    if let Some(p) = &a.loss_out {
        write_trace(&outcome, p)?;
    }
    let last = outcome.final_loss();
    println!(
        "loss {:.6} -> {:.6} (region {:.6}, binarization {:.6})",
        outcome.initial.total, last.total, last.region, last.binarization
    );
    Ok(())
}

fn print_summary(out: &seaice_core::pipeline::PipelineOutcome) {
    print!("{}", out.report.to_text());
    println!("saturation {:.4}, {}", out.saturation(), out.fit.params);
    print!("{}", out.timing_table());
}

fn run(cli: &Cli) -> Result<()> {
    let workers = check_threads(cli.threads)?;
    match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Normalize(a) => run_normalize(a, workers),
        Command::Stitch(a) => run_stitch(a, workers),
        Command::Blur(a) => run_blur(a, workers),
        Command::Calibrate(a) => run_calibrate(a, workers),
        Command::Binarize(a) => run_binarize(a),
        Command::Metrics(a) => run_metrics(a),
        Command::TrainToy(a) => run_train(a, workers),
        Command::Pipeline(a) => {
            let out = run_pipeline(&a.config(workers))?;
            print_summary(&out);
            Ok(())
        }
        Command::Benchmark(a) => {
            let (first, second) = benchmark(&a.config(workers))?;
            println!("run 1");
            print!("{}", first.timing_table());
            println!("run 2");
            print!("{}", second.timing_table());
            println!("outputs identical");
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
