//! Analytical logit scaling.
//!
//! The scene's low and high logit percentiles `z_lo`, `z_hi` are mapped onto
//! the sigmoid saturation bounds `-SATURATION_BOUND..=SATURATION_BOUND`:
//!
//! ```text
//! b = (z_hi + z_lo) / 2
//! T = (z_hi - z_lo) / (2 * SATURATION_BOUND)
//! p = sigmoid((z - b) / T)
//! ```
//!
//! No learning is involved: `T` and `b` are recomputed per scene, which makes
//! fit-then-apply invariant to any increasing affine change of the logits.

use std::fmt;
use std::path::Path;

use crate::error::{format_err, invalid, Error, Result};
use crate::parallel::for_each_row_band;
use crate::raster::Raster;

/// Smallest admissible temperature.
pub const T_FLOOR: f64 = 1e-9;
/// Scaled logits of `z_lo` and `z_hi` are `-5` and `+5`.
pub const SATURATION_BOUND: f64 = 5.0;
pub const DEFAULT_Q_LO: f64 = 2.0;
pub const DEFAULT_Q_HI: f64 = 98.0;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SATURATION_EPS: f64 = 0.01;

/// Largest binary32 strictly below 0.5 and the open-interval bounds used so
/// every probability stays in `(0, 1)` after rounding.
const BELOW_HALF: f32 = 0.499_999_97;
const P_MIN: f32 = f32::MIN_POSITIVE;
const P_MAX: f32 = 0.999_999_94;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationParams {
    temperature: f64,
    bias: f64,
}

impl CalibrationParams {
    pub fn new(temperature: f64, bias: f64) -> Result<Self> {
        if !(temperature >= T_FLOOR) || !temperature.is_finite() {
            return Err(invalid!(
                "temperature must be finite and >= {T_FLOOR}, got {temperature}"
            ));
        }
        if !bias.is_finite() {
            return Err(invalid!("bias must be finite, got {bias}"));
        }
        Ok(Self { temperature, bias })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Two lines, `T <value>` and `b <value>`, shortest round-trip decimals.
    pub fn to_text(&self) -> String {
        format!("T {}\nb {}\n", self.temperature, self.bias)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut t = None;
        let mut b = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| format_err!("bad params line `{line}`"))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| format_err!("bad params value in `{line}`"))?;
            match key {
                "T" => t = Some(value),
                "b" => b = Some(value),
                _ => return Err(format_err!("unknown params key `{key}`")),
            }
        }
        match (t, b) {
            (Some(t), Some(b)) => Self::new(t, b),
            _ => Err(format_err!("params need both `T` and `b` lines")),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

impl fmt::Display for CalibrationParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T={} b={}", self.temperature, self.bias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PercentilePair {
    pub q_lo: f64,
    pub q_hi: f64,
    pub z_lo: f64,
    pub z_hi: f64,
}

/// Result of [`fit_analytical_scaling`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFit {
    pub params: CalibrationParams,
    pub percentiles: PercentilePair,
    /// `z_lo == z_hi` (or nearly): the temperature was clamped to `T_FLOOR`.
    pub degenerate: bool,
}

fn check_q(q: f64) -> Result<()> {
    if (0.0..=100.0).contains(&q) {
        Ok(())
    } else {
        Err(invalid!("percentile {q} outside [0, 100]"))
    }
}

/// Order statistic `k` of `buf` (which it reorders).
fn select(buf: &mut [f32], k: usize) -> f32 {
    *buf.select_nth_unstable_by(k, f32::total_cmp).1
}

/// Linear-interpolation percentiles on sorted order statistics:
/// `h = q/100 * (n-1)`, `v[floor h] + frac(h) * (v[ceil h] - v[floor h])`.
///
/// Uses selection rather than a full sort; the values are identical.
pub fn percentiles(values: &[f32], qs: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(invalid!("percentile of an empty raster"));
    }
    for &q in qs {
        check_q(q)?;
    }
    let n = values.len();
    let mut buf = values.to_vec();
    qs.iter()
        .map(|&q| {
            let h = q / 100.0 * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (h.ceil() as usize).min(n - 1);
            let v_lo = f64::from(select(&mut buf, lo));
            let v_hi = if hi == lo {
                v_lo
            } else {
                // After selecting `lo`, everything right of it is >= v_lo and
                // the next order statistic is the minimum of that suffix.
                f64::from(
                    buf[lo + 1..]
                        .iter()
                        .copied()
                        .min_by(f32::total_cmp)
                        .unwrap(),
                )
            };
            Ok(v_lo + (h - lo as f64) * (v_hi - v_lo))
        })
        .collect()
}

pub fn percentile(raster: &Raster, q: f64) -> Result<f64> {
    Ok(percentiles(raster.values(), &[q])?[0])
}

/// Temperature and bias from the `q_lo` / `q_hi` logit percentiles.
pub fn fit_analytical_scaling(logits: &Raster, q_lo: f64, q_hi: f64) -> Result<ScalingFit> {
    check_q(q_lo)?;
    check_q(q_hi)?;
    if !(q_lo < q_hi) {
        return Err(invalid!("q_lo ({q_lo}) must be below q_hi ({q_hi})"));
    }
    let z = percentiles(logits.values(), &[q_lo, q_hi])?;
    let (z_lo, z_hi) = (z[0], z[1]);
    let bias = (z_hi + z_lo) / 2.0;
    let raw_t = (z_hi - z_lo) / (2.0 * SATURATION_BOUND);
    let degenerate = raw_t < T_FLOOR;
    let temperature = if degenerate { T_FLOOR } else { raw_t };
    Ok(ScalingFit {
        params: CalibrationParams::new(temperature, bias)?,
        percentiles: PercentilePair {
            q_lo,
            q_hi,
            z_lo,
            z_hi,
        },
        degenerate,
    })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability of one logit, rounded to binary32 inside `(0, 1)`.
///
/// Logits below the bias never round up to 0.5, so thresholding at 0.5 is
/// exactly the comparison `z >= b`.
pub fn scaled_probability(z: f32, params: &CalibrationParams) -> f32 {
    let z = f64::from(z);
    let p = sigmoid((z - params.bias) / params.temperature) as f32;
    let p = p.clamp(P_MIN, P_MAX);
    if z < params.bias && p >= 0.5 {
        BELOW_HALF
    } else {
        p
    }
}

pub fn apply_scaling(logits: &Raster, params: &CalibrationParams, workers: usize) -> Raster {
    let src = logits.values();
    let w = logits.width() as usize;
    let mut out = vec![0.0f32; src.len()];
    for_each_row_band(&mut out, w, workers, |first_row, band| {
        let offset = first_row * w;
        for (o, &z) in band.iter_mut().zip(&src[offset..]) {
            *o = scaled_probability(z, params);
        }
    });
    Raster::from_vec(logits.width(), logits.height(), out)
}

/// 1.0 where `p >= threshold` (ties go to ice), else 0.0.
pub fn binarize(probs: &Raster, threshold: f64) -> Result<Raster> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(invalid!("threshold {threshold} outside [0, 1]"));
    }
    let values = probs
        .values()
        .iter()
        .map(|&p| if f64::from(p) >= threshold { 1.0 } else { 0.0 })
        .collect();
    Ok(Raster::from_vec(probs.width(), probs.height(), values))
}

/// Fraction of pixels with `p < eps` or `p > 1 - eps`.
pub fn saturation_fraction(probs: &Raster, eps: f64) -> f64 {
    let saturated = probs
        .values()
        .iter()
        .filter(|&&p| {
            let p = f64::from(p);
            p < eps || p > 1.0 - eps
        })
        .count();
    saturated as f64 / probs.len() as f64
}
