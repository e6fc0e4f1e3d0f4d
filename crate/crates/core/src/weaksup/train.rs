use std::fmt::Write as _;
use std::path::Path;

use super::model::{gradient_padded, Gradient, PaddedInput, ToyModel};
use super::{
    augment_patch, patch_target, AugmentOp, PatchBundle, PatchWindow, DEFAULT_LAMBDA, DEFAULT_LR,
    DEFAULT_PATCH,
};
use crate::error::{invalid, Error, Result};
use crate::labels::PolygonLabelSet;
use crate::parallel::map_ordered;
use crate::raster::Scene;
use crate::rng::CounterRng;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_STEPS_PER_EPOCH: usize = 100;
pub const DEFAULT_BATCH: usize = 1;
pub const DEFAULT_TRAIN_SEED: u64 = 42;

#[derive(Clone, Debug)]
pub struct LabeledScene {
    pub scene: Scene,
    pub labels: PolygonLabelSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub patch_size: u32,
    pub lr: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Random rotation/flip per sampled patch.
    pub augment: bool,
    /// Start the bias at the logit of the mean label concentration.
    pub init_bias: bool,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            steps_per_epoch: DEFAULT_STEPS_PER_EPOCH,
            batch_size: DEFAULT_BATCH,
            patch_size: DEFAULT_PATCH,
            lr: DEFAULT_LR,
            lambda: DEFAULT_LAMBDA,
            seed: DEFAULT_TRAIN_SEED,
            augment: true,
            init_bias: true,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be >= 1".to_string());
        }
        if self.steps_per_epoch == 0 {
            problems.push("steps per epoch must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch size must be >= 1".to_string());
        }
        if self.patch_size == 0 {
            problems.push("patch size must be >= 1".to_string());
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            problems.push(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            ));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            problems.push(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Mean loss terms over all patches seen in one epoch, before each update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub region: f64,
    pub binarization: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ToyModel,
    /// Loss of the untrained model on the first batch, reported as epoch 0.
    pub initial: EpochLoss,
    pub trace: Vec<EpochLoss>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> EpochLoss {
        *self.trace.last().unwrap_or(&self.initial)
    }
}

/// `epoch,region,binarization,total` with an epoch-0 row for the initial loss.
pub fn trace_to_csv(outcome: &TrainOutcome) -> String {
    let mut out = String::from("epoch,region,binarization,total\n");
    for e in std::iter::once(&outcome.initial).chain(&outcome.trace) {
        writeln!(
            out,
            "{},{},{},{}",
            e.epoch, e.region, e.binarization, e.total
        )
        .unwrap();
    }
    out
}

pub fn write_trace(outcome: &TrainOutcome, path: &Path) -> Result<()> {
    std::fs::write(path, trace_to_csv(outcome)).map_err(|e| Error::io(path, e))
}

/// Logit of the area-weighted mean label concentration, clamped to `[-5, 5]`.
fn prior_logit(scenes: &[LabeledScene]) -> f64 {
    let (mut area, mut weighted) = (0.0, 0.0);
    for s in scenes {
        for p in s.labels.polygons() {
            let n = p.pixel_count() as f64;
            area += n;
            weighted += n * p.c_p;
        }
    }
    if area == 0.0 {
        return 0.0;
    }
    let c = weighted / area;
    (c / (1.0 - c)).ln().clamp(-5.0, 5.0)
}

/// Top-left corners of all fully labeled `size x size` windows of one scene.
fn valid_corners(labels: &PolygonLabelSet, size: u32) -> Vec<(u32, u32)> {
    let (w, h) = (labels.width() as usize, labels.height() as usize);
    let s = size as usize;
    if s > w || s > h {
        return Vec::new();
    }
    let cover = labels.coverage_mask();
    // summed-area table with a zero border
    let sw = w + 1;
    let mut sat = vec![0u32; sw * (h + 1)];
    for r in 0..h {
        let mut run = 0u32;
        for c in 0..w {
            run += cover.get(r, c) as u32;
            sat[(r + 1) * sw + c + 1] = sat[r * sw + c + 1] + run;
        }
    }
    let full = (s * s) as u32;
    let mut corners = Vec::new();
    for r in 0..=h - s {
        for c in 0..=w - s {
            let sum = sat[(r + s) * sw + c + s] + sat[r * sw + c]
                - sat[r * sw + c + s]
                - sat[(r + s) * sw + c];
            if sum == full {
                corners.push((r as u32, c as u32));
            }
        }
    }
    corners
}

struct Sample {
    input: PaddedInput,
    target: super::PatchTarget,
}

struct Sampler<'a> {
    scenes: &'a [LabeledScene],
    corners: Vec<Vec<(u32, u32)>>,
    total: u64,
    size: u32,
    augment: bool,
    rng: crate::rng::Cursor,
}

impl<'a> Sampler<'a> {
    fn new(scenes: &'a [LabeledScene], cfg: &TrainConfig) -> Result<Self> {
        let corners: Vec<_> = scenes
            .iter()
            .map(|s| valid_corners(&s.labels, cfg.patch_size))
            .collect();
        let total = corners.iter().map(|c| c.len() as u64).sum();
        if total == 0 {
            return Err(invalid!(
                "no fully labeled {0}x{0} patch in {1} scene(s)",
                cfg.patch_size,
                scenes.len()
            ));
        }
        Ok(Self {
            scenes,
            corners,
            total,
            size: cfg.patch_size,
            augment: cfg.augment,
            rng: CounterRng::new(cfg.seed).stream("train/sampler").cursor(),
        })
    }

    /// Patch index uniform over all valid windows of all scenes.
    fn draw(&mut self) -> Result<Sample> {
        let mut k = self.rng.below(self.total);
        let mut idx = 0;
        while k >= self.corners[idx].len() as u64 {
            k -= self.corners[idx].len() as u64;
            idx += 1;
        }
        let (row, col) = self.corners[idx][k as usize];
        let ls = &self.scenes[idx];
        let window = PatchWindow::square(row, col, self.size);
        let bundle = PatchBundle {
            patch: ls
                .scene
                .window(row as usize, col as usize, self.size, self.size)?,
            target: patch_target(&ls.labels, window)?,
        };
        let bundle = if self.augment {
            let op = AugmentOp::ALL[self.rng.below(6) as usize];
            augment_patch(&bundle, op)?
        } else {
            bundle
        };
        Ok(Sample {
            input: PaddedInput::from_rasters(bundle.patch.rasters()),
            target: bundle.target,
        })
    }
}

/// Adam over randomly sampled fully labeled patches.
pub fn train_toy(scenes: &[LabeledScene], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let channels = scenes
        .first()
        .ok_or_else(|| invalid!("no training scenes"))?
        .scene
        .channel_count();
    for (i, s) in scenes.iter().enumerate() {
        if s.scene.channel_count() != channels {
            return Err(invalid!(
                "scene {i} has {} channels, expected {channels}",
                s.scene.channel_count()
            ));
        }
        if (s.scene.width(), s.scene.height()) != (s.labels.width(), s.labels.height()) {
            return Err(invalid!("scene {i} and its labels differ in size"));
        }
    }
    let mut sampler = Sampler::new(scenes, cfg)?;
    let mut model = ToyModel::zeros(channels);
    if cfg.init_bias {
        *model.params_mut().last().expect("bias") = prior_logit(scenes);
    }
    let n_params = model.parameter_count();
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut step = 0i32;
    let mut initial = None;
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut sums = [0.0f64; 3];
        for _ in 0..cfg.steps_per_epoch {
            let batch = (0..cfg.batch_size)
                .map(|_| sampler.draw())
                .collect::<Result<Vec<_>>>()?;
            let results = map_ordered(&batch, cfg.workers, |s| {
                gradient_padded(&model, &s.input, s.target, cfg.lambda)
            });
            let mut grad = Gradient::zeros(channels);
            let mut batch_sums = [0.0f64; 3];
            let scale = 1.0 / batch.len() as f64;
            for (loss, g) in &results {
                grad.add_scaled(g, scale);
                batch_sums[0] += loss.region_term * scale;
                batch_sums[1] += loss.binarization_term * scale;
                batch_sums[2] += loss.total * scale;
            }
            if initial.is_none() {
                initial = Some(EpochLoss {
                    epoch: 0,
                    region: batch_sums[0],
                    binarization: batch_sums[1],
                    total: batch_sums[2],
                });
            }
            for (s, b) in sums.iter_mut().zip(batch_sums) {
                *s += b;
            }

            step += 1;
            let bc1 = 1.0 - BETA1.powi(step);
            let bc2 = 1.0 - BETA2.powi(step);
            for (i, (p, g)) in model.params_mut().zip(grad.to_vec()).enumerate() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        let n = cfg.steps_per_epoch as f64;
        let e = EpochLoss {
            epoch,
            region: sums[0] / n,
            binarization: sums[1] / n,
            total: sums[2] / n,
        };
        log::debug!(
            "epoch {epoch}: region {:.6} binarization {:.6} total {:.6}",
            e.region,
            e.binarization,
            e.total
        );
        trace.push(e);
    }
    Ok(TrainOutcome {
        model,
        initial: initial.expect("at least one step"),
        trace,
    })
}
