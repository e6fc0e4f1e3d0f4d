//! End-to-end run: synth/normalize, tiled inference and stitching, blur,
//! calibration, binarization and metrics, in that fixed order.
//!
//! Every intermediate raster is written first as `<name>.partial` and renamed
//! once its stage completes, so a failed run leaves only `*.partial` files
//! for the stage that broke.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::calibrate::{
    apply_scaling, binarize, fit_analytical_scaling, saturation_fraction, ScalingFit, DEFAULT_Q_HI,
    DEFAULT_Q_LO, DEFAULT_SATURATION_EPS, DEFAULT_THRESHOLD,
};
use crate::error::{invalid, Error, Result};
use crate::ingest::{normalize_scene, ChannelSpecList, NormalizeReport, DEFAULT_SPEC};
use crate::labels::{read_labels, write_labels, PolygonLabelSet};
use crate::metrics::{scene_report, write_pgm, SceneReport};
use crate::parallel::map_ordered;
use crate::raster::{read_raster, read_scene, write_raster, write_scene, Raster, Scene};
use crate::regularize::{blur, BlurSpec, DEFAULT_SIGMA};
use crate::rng::CounterRng;
use crate::synth::{generate, SynthSpec};
use crate::tiling::{Accumulator, PlanSpec, TilePlan};
use crate::weaksup::{
    model_logits, train_toy, write_trace, EpochLoss, LabeledScene, ToyModel, TrainConfig,
};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_DEMO_SIZE: u32 = 1024;

/// Built-in synthetic scenes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Demo {
    /// Compact pack ice cut by narrow leads.
    Leads,
    /// Fragmented floes in a marginal ice zone.
    Summer,
}

impl Demo {
    pub fn spec(self, width: u32, height: u32, seed: u64) -> SynthSpec {
        match self {
            Demo::Leads => SynthSpec::leads(width, height, seed),
            Demo::Summer => SynthSpec::summer(width, height, seed),
        }
    }
}

impl FromStr for Demo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leads" => Ok(Demo::Leads),
            "summer" => Ok(Demo::Summer),
            _ => Err(invalid!("unknown demo `{s}` (expected leads or summer)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SceneSource {
    Demo {
        demo: Demo,
        width: u32,
        height: u32,
    },
    Files {
        scene: PathBuf,
        labels: PathBuf,
        truth: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub source: SceneSource,
    /// Where artifacts go; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Pretrained model; when absent a toy model is trained on the scene's labels.
    pub model: Option<PathBuf>,
    pub normalize: String,
    pub plan: PlanSpec,
    pub sigma: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub threshold: f64,
    pub train: TrainConfig,
    pub seed: u64,
    pub workers: usize,
    pub export_pgm: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source: SceneSource::Demo {
                demo: Demo::Leads,
                width: DEFAULT_DEMO_SIZE,
                height: DEFAULT_DEMO_SIZE,
            },
            out_dir: None,
            model: None,
            normalize: DEFAULT_SPEC.to_string(),
            plan: PlanSpec::default(),
            sigma: DEFAULT_SIGMA,
            q_lo: DEFAULT_Q_LO,
            q_hi: DEFAULT_Q_HI,
            threshold: DEFAULT_THRESHOLD,
            train: TrainConfig::default(),
            seed: DEFAULT_SEED,
            workers: 1,
            export_pgm: false,
        }
    }
}

impl PipelineConfig {
    /// Every problem at once, before any stage runs.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let (window, stride) = (self.plan.window, self.plan.stride);
        if window == 0 {
            problems.push("window must be >= 1".to_string());
        }
        if stride == 0 {
            problems.push("stride must be >= 1".to_string());
        }
        if stride > window {
            problems.push(format!("stride {stride} exceeds window {window}"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            problems.push(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        for (name, q) in [("q_lo", self.q_lo), ("q_hi", self.q_hi)] {
            if !(0.0..=100.0).contains(&q) {
                problems.push(format!("{name} {q} outside [0, 100]"));
            }
        }
        if !(self.q_lo < self.q_hi) {
            problems.push(format!(
                "q_lo ({}) must be below q_hi ({})",
                self.q_lo, self.q_hi
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            problems.push(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if self.workers == 0 {
            problems.push("threads must be >= 1".to_string());
        }
        if let Err(e) = ChannelSpecList::from_str(&self.normalize) {
            problems.push(format!("normalize spec: {e}"));
        }
        if self.model.is_none() {
            if let Err(Error::Config(p)) = self.train.validate() {
                problems.extend(p);
            }
        }
        match &self.source {
            SceneSource::Demo { width, height, .. } => {
                if *width < window || *height < window {
                    problems.push(format!(
                        "demo scene {width}x{height} smaller than window {window}"
                    ));
                }
            }
            SceneSource::Files {
                scene,
                labels,
                truth,
            } => {
                for p in [Some(scene), Some(labels), truth.as_ref()]
                    .into_iter()
                    .flatten()
                {
                    if !p.is_file() {
                        problems.push(format!("input {} does not exist", p.display()));
                    }
                }
            }
        }
        if let Some(m) = &self.model {
            if !m.is_file() {
                problems.push(format!("model {} does not exist", m.display()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Sub-seed of a stage, derived from the run seed by a fixed label.
    pub fn stage_seed(&self, label: &str) -> u64 {
        CounterRng::new(self.seed).stream(label).key()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub elapsed: Duration,
}

/// Results and intermediates of one run.
#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub dims: (u32, u32),
    pub tiles: usize,
    pub labels: PolygonLabelSet,
    pub truth: Option<Raster>,
    pub normalize: NormalizeReport,
    pub model: ToyModel,
    pub trace: Vec<EpochLoss>,
    /// Stitched raw logits.
    pub logits: Raster,
    pub smoothed: Raster,
    pub fit: ScalingFit,
    pub probs: Raster,
    pub mask: Raster,
    pub report: SceneReport,
    pub timings: Vec<StageTiming>,
    pub artifacts: Vec<PathBuf>,
}

impl PipelineOutcome {
    pub fn total_time(&self) -> Duration {
        self.timings.iter().map(|t| t.elapsed).sum()
    }

    pub fn saturation(&self) -> f64 {
        saturation_fraction(&self.probs, DEFAULT_SATURATION_EPS)
    }

    pub fn timing_table(&self) -> String {
        let mpx = f64::from(self.dims.0) * f64::from(self.dims.1) / 1e6;
        let mut out = format!("{:<10} {:>10} {:>12}\n", "stage", "seconds", "s/Mpx");
        for t in &self.timings {
            let s = t.elapsed.as_secs_f64();
            writeln!(out, "{:<10} {:>10.3} {:>12.4}", t.stage, s, s / mpx).unwrap();
        }
        let total = self.total_time().as_secs_f64();
        writeln!(out, "{:<10} {:>10.3} {:>12.4}", "total", total, total / mpx).unwrap();
        writeln!(
            out,
            "scene {}x{} ({mpx:.2} Mpx), {} tiles, throughput {:.3} Mpx/s",
            self.dims.0,
            self.dims.1,
            self.tiles,
            mpx / total.max(1e-9)
        )
        .unwrap();
        out
    }
}

/// Staged writes into the output directory.
struct Outputs {
    dir: Option<PathBuf>,
    pending: Vec<(PathBuf, PathBuf)>,
    done: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(Self {
            dir,
            pending: Vec::new(),
            done: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let fin = dir.join(name);
        let partial = dir.join(format!("{name}.partial"));
        f(&partial)?;
        self.pending.push((partial, fin));
        Ok(())
    }

    fn commit(&mut self) -> Result<()> {
        for (partial, fin) in self.pending.drain(..) {
            std::fs::rename(&partial, &fin).map_err(|e| Error::io(&fin, e))?;
            self.done.push(fin);
        }
        Ok(())
    }
}

struct Clock {
    timings: Vec<StageTiming>,
}

impl Clock {
    /// Run a stage, record its time and tag errors with its name.
    fn stage<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        });
        self.add(stage, start.elapsed());
        out
    }

    fn add(&mut self, stage: &'static str, elapsed: Duration) {
        match self.timings.iter_mut().find(|t| t.stage == stage) {
            Some(t) => t.elapsed += elapsed,
            None => self.timings.push(StageTiming { stage, elapsed }),
        }
    }
}

/// Logits of every plan window, stitched by overlap averaging. Tiles are
/// produced in parallel batches and committed in plan order.
pub fn tiled_inference(
    model: &ToyModel,
    scene: &Scene,
    plan: &TilePlan,
    workers: usize,
) -> Result<Raster> {
    let mut acc = Accumulator::new(plan);
    for offsets in plan.offsets().chunks(batch_len(workers)) {
        acc.commit(
            &infer_batch(model, scene, offsets, plan.window(), workers)?,
            workers,
        )?;
    }
    acc.finish()
}

fn batch_len(workers: usize) -> usize {
    (workers * 4).max(8)
}

fn infer_batch(
    model: &ToyModel,
    scene: &Scene,
    offsets: &[(u32, u32)],
    window: u32,
    workers: usize,
) -> Result<Vec<Raster>> {
    map_ordered(offsets, workers, |&(r, c)| {
        scene
            .window(r as usize, c as usize, window, window)
            .and_then(|patch| model_logits(model, &patch))
    })
    .into_iter()
    .collect()
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let workers = config.workers;
    let mut clock = Clock {
        timings: Vec::new(),
    };
    let mut out = Outputs::new(config.out_dir.clone())?;

    let (scene, labels, truth) = match &config.source {
        SceneSource::Demo {
            demo,
            width,
            height,
        } => clock.stage("synth", || {
            let t = generate(&demo.spec(*width, *height, config.stage_seed("synth")))?;
            out.write("scene.rf32", |p| write_scene(&t.scene, p))?;
            out.write("truth.rf32", |p| write_raster(&t.truth_mask, p))?;
            out.write("labels.plbl", |p| write_labels(&t.labels, p))?;
            out.commit()?;
            Ok((t.scene, t.labels, Some(t.truth_mask)))
        })?,
        SceneSource::Files {
            scene,
            labels,
            truth,
        } => clock.stage("load", || {
            let s = read_scene(scene, None)?;
            let l = read_labels(labels)?;
            if (s.width(), s.height()) != (l.width(), l.height()) {
                return Err(invalid!("scene and labels differ in size"));
            }
            let t = truth.as_deref().map(read_raster).transpose()?;
            Ok((s, l, t))
        })?,
    };
    let dims = (scene.width(), scene.height());

    let specs: ChannelSpecList = config.normalize.parse()?;
    let (normalized, norm_report) = clock.stage("normalize", || {
        let (n, r) = normalize_scene(&scene, &specs, workers)?;
        out.write("normalized.rf32", |p| write_scene(&n, p))?;
        out.write("normalize.txt", |p| {
            std::fs::write(p, r.to_text()).map_err(|e| Error::io(p, e))
        })?;
        out.commit()?;
        Ok((n, r))
    })?;
    drop(scene);

    let (model, trace) = match &config.model {
        Some(path) => clock.stage("load-model", || Ok((ToyModel::read(path)?, Vec::new())))?,
        None => clock.stage("train", || {
            let train = TrainConfig {
                seed: config.stage_seed("train"),
                workers,
                ..config.train.clone()
            };
            let scenes = [LabeledScene {
                scene: normalized.clone(),
                labels: labels.clone(),
            }];
            let outcome = train_toy(&scenes, &train)?;
            out.write("model.txt", |p| outcome.model.write(p))?;
            out.write("loss.csv", |p| write_trace(&outcome, p))?;
            out.commit()?;
            Ok((outcome.model, outcome.trace))
        })?,
    };

    let plan = TilePlan::from_spec(dims.0, dims.1, config.plan)?;
    let mut acc = Accumulator::new(&plan);
    for offsets in plan.offsets().chunks(batch_len(workers)) {
        let tiles = clock.stage("infer", || {
            infer_batch(&model, &normalized, offsets, plan.window(), workers)
        })?;
        clock.stage("stitch", || acc.commit(&tiles, workers))?;
    }
    let logits = clock.stage("stitch", || {
        let l = acc.finish()?;
        out.write("logits.rf32", |p| write_raster(&l, p))?;
        out.commit()?;
        Ok(l)
    })?;
    drop(normalized);

    let smoothed = clock.stage("blur", || {
        let s = blur(&logits, &BlurSpec::new(config.sigma)?, workers);
        out.write("smoothed.rf32", |p| write_raster(&s, p))?;
        out.commit()?;
        Ok(s)
    })?;

    let (fit, probs) = clock.stage("calibrate", || {
        let fit = fit_analytical_scaling(&smoothed, config.q_lo, config.q_hi)?;
        if fit.degenerate {
            log::warn!("degenerate logit range; temperature clamped");
        }
        let probs = apply_scaling(&smoothed, &fit.params, workers);
        out.write("probs.rf32", |p| write_raster(&probs, p))?;
        out.write("params.txt", |p| fit.params.write(p))?;
        if config.export_pgm {
            out.write("probs.pgm", |p| write_pgm(&probs, p))?;
        }
        out.commit()?;
        Ok((fit, probs))
    })?;

    let mask = clock.stage("binarize", || {
        let m = binarize(&probs, config.threshold)?;
        out.write("mask.rf32", |p| write_raster(&m, p))?;
        if config.export_pgm {
            out.write("mask.pgm", |p| write_pgm(&m, p))?;
        }
        out.commit()?;
        Ok(m)
    })?;

    let report = clock.stage("metrics", || {
        let r = scene_report(&mask, &labels, truth.as_ref())?;
        out.write("report.csv", |p| r.write_csv(p))?;
        out.commit()?;
        Ok(r)
    })?;

    for t in &clock.timings {
        log::info!("stage {}: {:.3} s", t.stage, t.elapsed.as_secs_f64());
    }
    Ok(PipelineOutcome {
        dims,
        tiles: plan.len(),
        labels,
        truth,
        normalize: norm_report,
        model,
        trace,
        logits,
        smoothed,
        fit,
        probs,
        mask,
        report,
        timings: clock.timings,
        artifacts: out.done,
    })
}

/// Same run twice; the second must reproduce the first mask exactly.
pub fn benchmark(config: &PipelineConfig) -> Result<(PipelineOutcome, PipelineOutcome)> {
    let first = run_pipeline(config)?;
    let second = run_pipeline(config)?;
    if first.mask != second.mask || first.logits != second.logits {
        return Err(invalid!("benchmark runs produced different outputs"));
    }
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PipelineConfig {
        PipelineConfig {
            source: SceneSource::Demo {
                demo: Demo::Leads,
                width: 192,
                height: 160,
            },
            plan: PlanSpec {
                window: 64,
                stride: 32,
            },
            train: TrainConfig {
                epochs: 2,
                steps_per_epoch: 3,
                batch_size: 2,
                patch_size: 64,
                lr: 1e-2,
                ..TrainConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn consolidated_validation() {
        let cfg = PipelineConfig {
            plan: PlanSpec {
                window: 64,
                stride: 128,
            },
            sigma: -1.0,
            q_lo: 99.0,
            threshold: 1.5,
            ..small()
        };
        match cfg.validate() {
            Err(Error::Config(p)) => {
                assert!(p.len() >= 4, "{p:?}");
                assert!(p.iter().any(|m| m.contains("stride 128 exceeds window 64")));
            }
            other => panic!("{other:?}"),
        }
        assert!(run_pipeline(&cfg).unwrap_err().is_validation());
    }

    #[test]
    fn in_memory_run_is_deterministic() {
        let a = run_pipeline(&small()).unwrap();
        let b = run_pipeline(&PipelineConfig {
            workers: 3,
            ..small()
        })
        .unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.report, b.report);
        assert!(a.mask.is_binary());
        assert_eq!(a.tiles, 5 * 4);
        assert!(a.artifacts.is_empty());
    }

    #[test]
    fn artifacts_written_once_complete() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            out_dir: Some(dir.path().to_path_buf()),
            export_pgm: true,
            ..small()
        };
        let out = run_pipeline(&cfg).unwrap();
        for name in [
            "scene.rf32",
            "truth.rf32",
            "labels.plbl",
            "normalized.rf32",
            "normalize.txt",
            "model.txt",
            "loss.csv",
            "logits.rf32",
            "smoothed.rf32",
            "probs.rf32",
            "params.txt",
            "probs.pgm",
            "mask.rf32",
            "mask.pgm",
            "report.csv",
        ] {
            assert!(dir.path().join(name).is_file(), "{name}");
        }
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "partial"))
            .collect();
        assert!(leftovers.is_empty());
        assert_eq!(
            read_raster(&dir.path().join("mask.rf32")).unwrap(),
            out.mask
        );
        let stages: Vec<_> = out.timings.iter().map(|t| t.stage).collect();
        assert_eq!(
            stages,
            [
                "synth",
                "normalize",
                "train",
                "infer",
                "stitch",
                "blur",
                "calibrate",
                "binarize",
                "metrics"
            ]
        );
    }

    #[test]
    fn failing_stage_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let scene_path = dir.path().join("s.rf32");
        let labels_path = dir.path().join("l.plbl");
        let t = generate(&SynthSpec::leads(64, 64, 1)).unwrap();
        write_scene(&t.scene, &scene_path).unwrap();
        write_labels(&PolygonLabelSet::empty(64, 64).unwrap(), &labels_path).unwrap();
        let cfg = PipelineConfig {
            source: SceneSource::Files {
                scene: scene_path,
                labels: labels_path,
                truth: None,
            },
            ..small()
        };
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(err.to_string().contains("stage `train`"), "{err}");
    }
}
