use std::fmt::Write as _;
use std::path::Path;

use super::{loss_terms, LossBreakdown, PatchTarget};
use crate::calibrate::sigmoid;
use crate::error::{format_err, invalid, Error, Result};
use crate::raster::{Raster, Scene};
use crate::regularize::reflect101;

/// One 3x3 multi-channel convolution plus bias, followed by a sigmoid.
///
/// Weights are indexed `[channel][dr][dc]` with `dr, dc in 0..3` meaning
/// offsets `-1..=1`; borders use reflect-101.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    channels: usize,
    weights: Vec<f64>,
    bias: f64,
}

/// Same layout as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Gradient {
    pub fn zeros(channels: usize) -> Self {
        Self {
            weights: vec![0.0; 9 * channels],
            bias: 0.0,
        }
    }

    /// Weights followed by the bias.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v
    }

    pub fn norm(&self) -> f64 {
        self.to_vec().iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub(crate) fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += scale * b;
        }
        self.bias += scale * other.bias;
    }
}

impl ToyModel {
    pub fn zeros(channels: usize) -> Self {
        Self {
            channels,
            weights: vec![0.0; 9 * channels],
            bias: 0.0,
        }
    }

    pub fn new(channels: usize, weights: Vec<f64>, bias: f64) -> Result<Self> {
        if channels == 0 {
            return Err(invalid!("model needs at least one channel"));
        }
        if weights.len() != 9 * channels {
            return Err(invalid!(
                "{} weights for {channels} channels, expected {}",
                weights.len(),
                9 * channels
            ));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid!("model parameters must be finite"));
        }
        Ok(Self {
            channels,
            weights,
            bias,
        })
    }

    /// Centre tap 1 on `channel`, everything else 0.
    pub fn identity(channels: usize, channel: usize) -> Self {
        let mut m = Self::zeros(channels);
        m.weights[channel * 9 + 4] = 1.0;
        m
    }

    /// Build from `9C` weights followed by the bias.
    pub fn from_params(channels: usize, params: &[f64]) -> Result<Self> {
        let (bias, weights) = params
            .split_last()
            .ok_or_else(|| invalid!("empty parameter vector"))?;
        Self::new(channels, weights.to_vec(), *bias)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn parameter_count(&self) -> usize {
        9 * self.channels + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .chain(std::iter::once(&mut self.bias))
    }

    /// `TOY 1 <C>` then `9C + 1` shortest round-trip decimals, one per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("TOY 1 {}\n", self.channels);
        for p in self.params() {
            writeln!(out, "{p}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| format_err!("empty model file"))?;
        let channels = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["TOY", "1", c] => c
                .parse::<usize>()
                .map_err(|_| format_err!("bad channel count `{c}`"))?,
            _ => return Err(format_err!("bad magic: expected `TOY 1 <C>`")),
        };
        let params = lines
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|_| format_err!("bad parameter `{l}`"))
            })
            .collect::<Result<Vec<_>>>()?;
        if params.len() != 9 * channels + 1 {
            return Err(format_err!(
                "{} parameters for {channels} channels, expected {}",
                params.len(),
                9 * channels + 1
            ));
        }
        Self::from_params(channels, &params)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Input channels with a one-pixel reflect-101 border, in f64.
pub(crate) struct PaddedInput {
    width: usize,
    height: usize,
    channels: Vec<Vec<f64>>,
}

impl PaddedInput {
    pub(crate) fn from_rasters<'a>(rasters: impl IntoIterator<Item = &'a Raster>) -> Self {
        let mut width = 0;
        let mut height = 0;
        let channels = rasters
            .into_iter()
            .map(|r| {
                width = r.width() as usize;
                height = r.height() as usize;
                let pw = width + 2;
                let mut buf = vec![0.0; pw * (height + 2)];
                let (left, right) = (reflect101(-1, width), reflect101(width as i64, width));
                for py in 0..height + 2 {
                    let row = r.row(reflect101(py as i64 - 1, height));
                    let dst = &mut buf[py * pw..(py + 1) * pw];
                    for (d, &v) in dst[1..=width].iter_mut().zip(row) {
                        *d = f64::from(v);
                    }
                    dst[0] = f64::from(row[left]);
                    dst[pw - 1] = f64::from(row[right]);
                }
                buf
            })
            .collect();
        Self {
            width,
            height,
            channels,
        }
    }

    pub(crate) fn logits(&self, model: &ToyModel) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let pw = w + 2;
        let mut out = vec![model.bias; w * h];
        for (c, pad) in self.channels.iter().enumerate() {
            for dr in 0..3 {
                for dc in 0..3 {
                    let weight = model.weights[c * 9 + dr * 3 + dc];
                    if weight == 0.0 {
                        continue;
                    }
                    for y in 0..h {
                        let src = &pad[(y + dr) * pw + dc..][..w];
                        for (o, &x) in out[y * w..][..w].iter_mut().zip(src) {
                            *o += weight * x;
                        }
                    }
                }
            }
        }
        out
    }

    /// `sum_i upstream_i * d z_i / d theta`.
    fn backprop(&self, upstream: &[f64]) -> Gradient {
        let (w, h) = (self.width, self.height);
        let pw = w + 2;
        let mut grad = Gradient::zeros(self.channels.len());
        for (c, pad) in self.channels.iter().enumerate() {
            for dr in 0..3 {
                for dc in 0..3 {
                    let mut acc = 0.0;
                    for y in 0..h {
                        acc += dot(&upstream[y * w..][..w], &pad[(y + dr) * pw + dc..][..w]);
                    }
                    grad.weights[c * 9 + dr * 3 + dc] = acc;
                }
            }
        }
        grad.bias = upstream.iter().sum();
        grad
    }
}

/// Dot product with four interleaved partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            lanes[k] += x[k] * y[k];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

fn check_channels(model: &ToyModel, patch: &Scene) -> Result<()> {
    if patch.channel_count() != model.channels {
        return Err(invalid!(
            "model expects {} channels, patch has {}",
            model.channels,
            patch.channel_count()
        ));
    }
    Ok(())
}

/// Logits and probabilities of a patch (any size).
pub fn model_forward(model: &ToyModel, patch: &Scene) -> Result<(Raster, Raster)> {
    check_channels(model, patch)?;
    let input = PaddedInput::from_rasters(patch.rasters());
    let z = input.logits(model);
    let (w, h) = (patch.width(), patch.height());
    let logits = z.iter().map(|&v| v as f32).collect();
    let probs = z.iter().map(|&v| sigmoid(v) as f32).collect();
    Ok((Raster::new(w, h, logits)?, Raster::new(w, h, probs)?))
}

/// Logits only, for tiled inference.
pub fn model_logits(model: &ToyModel, patch: &Scene) -> Result<Raster> {
    check_channels(model, patch)?;
    let z = PaddedInput::from_rasters(patch.rasters()).logits(model);
    Raster::new(
        patch.width(),
        patch.height(),
        z.iter().map(|&v| v as f32).collect(),
    )
}

/// Gradients of the region and binarization terms separately, plus the loss.
pub(crate) fn gradient_terms(
    model: &ToyModel,
    input: &PaddedInput,
    target: PatchTarget,
    lambda: f64,
) -> (LossBreakdown, Gradient, Gradient) {
    let z = input.logits(model);
    let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
    let loss = loss_terms(&p, target, lambda);
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    // d region / d z_i = 2 (mean - c) / N * p_i (1 - p_i)
    // d binar. / d z_i = (1 - 2 p_i) / N * p_i (1 - p_i)
    let region_up: Vec<f64> = p
        .iter()
        .map(|&pi| 2.0 * (mean - target.c_p()) / n * pi * (1.0 - pi))
        .collect();
    let binar_up: Vec<f64> = p
        .iter()
        .map(|&pi| (1.0 - 2.0 * pi) / n * pi * (1.0 - pi))
        .collect();
    (loss, input.backprop(&region_up), input.backprop(&binar_up))
}

pub(crate) fn gradient_padded(
    model: &ToyModel,
    input: &PaddedInput,
    target: PatchTarget,
    lambda: f64,
) -> (LossBreakdown, Gradient) {
    let z = input.logits(model);
    let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
    let loss = loss_terms(&p, target, lambda);
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let region = 2.0 * (mean - target.c_p()) / n;
    let upstream: Vec<f64> = p
        .iter()
        .map(|&pi| (region + lambda * (1.0 - 2.0 * pi) / n) * pi * (1.0 - pi))
        .collect();
    (loss, input.backprop(&upstream))
}

/// Analytic gradient of `region + lambda * binarization` w.r.t. every parameter.
pub fn model_gradient(
    model: &ToyModel,
    patch: &Scene,
    target: PatchTarget,
    lambda: f64,
) -> Result<(LossBreakdown, Gradient)> {
    check_channels(model, patch)?;
    if !(lambda >= 0.0) {
        return Err(invalid!("lambda must be >= 0, got {lambda}"));
    }
    let input = PaddedInput::from_rasters(patch.rasters());
    Ok(gradient_padded(model, &input, target, lambda))
}

/// Loss of a patch in double precision, for finite-difference checks.
pub fn model_loss(
    model: &ToyModel,
    patch: &Scene,
    target: PatchTarget,
    lambda: f64,
) -> Result<LossBreakdown> {
    check_channels(model, patch)?;
    let input = PaddedInput::from_rasters(patch.rasters());
    let p: Vec<f64> = input.logits(model).iter().map(|&v| sigmoid(v)).collect();
    Ok(loss_terms(&p, target, lambda))
}

/// Region and binarization gradients, unweighted.
pub fn model_gradient_terms(
    model: &ToyModel,
    patch: &Scene,
    target: PatchTarget,
) -> Result<(Gradient, Gradient)> {
    check_channels(model, patch)?;
    let input = PaddedInput::from_rasters(patch.rasters());
    let (_, region, binar) = gradient_terms(model, &input, target, 0.0);
    Ok((region, binar))
}
