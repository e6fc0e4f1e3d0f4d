//! Weak supervision from regional concentrations.
//!
//! A patch's dense probability map is pooled to its mean (GAP) and compared
//! with the area-weighted concentration of the polygons under the patch:
//!
//! ```text
//! region       = (mean(p) - c_p)^2
//! binarization = mean(p * (1 - p))
//! total        = region + lambda * binarization
//! ```
//!
//! The binarization term vanishes only at `p in {0, 1}`, pushing the model
//! away from uniform intermediate predictions.

mod augment;
mod model;
mod train;

pub use augment::{augment_patch, AugmentOp, PatchBundle};
pub use model::{
    model_forward, model_gradient, model_gradient_terms, model_logits, model_loss, Gradient,
    ToyModel,
};
pub use train::{
    trace_to_csv, train_toy, write_trace, EpochLoss, LabeledScene, TrainConfig, TrainOutcome,
    DEFAULT_BATCH, DEFAULT_EPOCHS, DEFAULT_STEPS_PER_EPOCH, DEFAULT_TRAIN_SEED,
};

use crate::error::{invalid, Result};
use crate::labels::PolygonLabelSet;
use crate::raster::Raster;

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_PATCH: u32 = 256;

/// Area-weighted concentration of a patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchTarget {
    c_p: f64,
}

impl PatchTarget {
    pub fn new(c_p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c_p) {
            return Err(invalid!("patch target {c_p} outside [0, 1]"));
        }
        Ok(Self { c_p })
    }

    pub fn c_p(&self) -> f64 {
        self.c_p
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub region_term: f64,
    pub binarization_term: f64,
    pub lambda: f64,
}

/// Rectangle `[row, row+height) x [col, col+width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchWindow {
    pub row: u32,
    pub col: u32,
    pub width: u32,
    pub height: u32,
}

impl PatchWindow {
    pub fn square(row: u32, col: u32, size: u32) -> Self {
        Self {
            row,
            col,
            width: size,
            height: size,
        }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

/// Global average pooling in double precision.
///
/// Values are summed in ascending order so the result depends only on the
/// multiset of pixel values, not on their arrangement.
pub fn gap(probs: &Raster) -> f64 {
    let mut v = probs.values().to_vec();
    v.sort_unstable_by(f32::total_cmp);
    v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64
}

/// `sum_k |P_k ∩ patch| / |patch| * c_p(k)`; every patch pixel must be labeled.
pub fn patch_target(labels: &PolygonLabelSet, window: PatchWindow) -> Result<PatchTarget> {
    if window.width == 0
        || window.height == 0
        || window.row + window.height > labels.height()
        || window.col + window.width > labels.width()
    {
        return Err(invalid!("patch window {window:?} outside the label grid"));
    }
    let (r0, r1) = (window.row, window.row + window.height);
    let (c0, c1) = (window.col, window.col + window.width);
    let mut covered = 0u64;
    let mut weighted = 0.0f64;
    for poly in labels.polygons() {
        let mut inside = 0u64;
        for run in &poly.runs {
            if run.row < r0 || run.row >= r1 {
                continue;
            }
            let lo = run.col.max(c0);
            let hi = (run.col + run.len).min(c1);
            if hi > lo {
                inside += u64::from(hi - lo);
            }
        }
        covered += inside;
        weighted += inside as f64 * poly.c_p;
    }
    let area = window.area();
    if covered < area {
        return Err(invalid!(
            "patch at ({},{}) has {} unlabeled pixels",
            window.row,
            window.col,
            area - covered
        ));
    }
    PatchTarget::new((weighted / area as f64).clamp(0.0, 1.0))
}

/// Loss terms of a probability map given in double precision.
pub(crate) fn loss_terms(probs: &[f64], target: PatchTarget, lambda: f64) -> LossBreakdown {
    let n = probs.len() as f64;
    let mean = probs.iter().sum::<f64>() / n;
    let region_term = (mean - target.c_p).powi(2);
    let binarization_term = probs.iter().map(|p| p * (1.0 - p)).sum::<f64>() / n;
    LossBreakdown {
        total: region_term + lambda * binarization_term,
        region_term,
        binarization_term,
        lambda,
    }
}

pub fn region_loss(probs: &Raster, target: PatchTarget, lambda: f64) -> Result<LossBreakdown> {
    if !(lambda >= 0.0) {
        return Err(invalid!("lambda must be >= 0, got {lambda}"));
    }
    let p: Vec<f64> = probs.values().iter().map(|&v| f64::from(v)).collect();
    Ok(loss_terms(&p, target, lambda))
}
