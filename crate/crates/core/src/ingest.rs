//! Channel preprocessing: clip to a physical range, then standardize.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::raster::{Raster, Scene};

/// Floor applied to the standard deviation of near-constant channels.
pub const STD_FLOOR: f64 = 1e-12;

/// Clip range of one input channel, in its physical units (dB, K).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    pub name: String,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl ChannelSpec {
    pub fn new(name: impl Into<String>, clip_lo: f64, clip_hi: f64) -> Result<Self> {
        let name = name.into();
        if !(clip_lo < clip_hi) {
            return Err(invalid!(
                "channel `{name}`: clip_lo {clip_lo} must be below clip_hi {clip_hi}"
            ));
        }
        Ok(Self {
            name,
            clip_lo,
            clip_hi,
        })
    }

    /// SAR backscatter, `[-30, 20]` dB.
    pub fn sar(name: &str) -> Self {
        Self::new(name, -30.0, 20.0).unwrap()
    }

    /// Passive-microwave brightness temperature, `[150, 300]` K.
    pub fn brightness_temperature(name: &str) -> Self {
        Self::new(name, 150.0, 300.0).unwrap()
    }
}

/// Comma-separated `NAME:LO:HI` list, e.g. `HH:-30:20,HV:-30:20,TB:150:300`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpecList(pub Vec<ChannelSpec>);

pub const DEFAULT_SPEC: &str = "HH:-30:20,HV:-30:20,TB:150:300";

impl FromStr for ChannelSpecList {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let specs = s
            .split(',')
            .map(|item| {
                let parts: Vec<&str> = item.trim().split(':').collect();
                let [name, lo, hi] = parts.as_slice() else {
                    return Err(invalid!("channel spec `{item}` is not NAME:LO:HI"));
                };
                let num = |t: &str| {
                    t.parse::<f64>()
                        .map_err(|_| invalid!("channel spec `{item}`: bad number `{t}`"))
                };
                ChannelSpec::new(*name, num(lo)?, num(hi)?)
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].iter().any(|o| o.name == s.name) {
                return Err(invalid!("channel `{}` listed twice", s.name));
            }
        }
        Ok(Self(specs))
    }
}

impl fmt::Display for ChannelSpecList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self
            .0
            .iter()
            .map(|s| format!("{}:{}:{}", s.name, s.clip_lo, s.clip_hi))
            .collect();
        f.write_str(&items.join(","))
    }
}

/// Clamp every value into `[clip_lo, clip_hi]`; interior values are untouched.
pub fn clip_channel(raster: &Raster, spec: &ChannelSpec) -> Raster {
    let (lo, hi) = (spec.clip_lo, spec.clip_hi);
    let values = raster
        .values()
        .iter()
        .map(|&v| {
            let x = f64::from(v);
            if x < lo {
                lo as f32
            } else if x > hi {
                hi as f32
            } else {
                v
            }
        })
        .collect();
    Raster::from_vec(raster.width(), raster.height(), values)
}

/// Whole-raster statistics used by [`standardize_channel`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    /// Population standard deviation, before flooring.
    pub std: f64,
}

/// `(x - mean) / max(std, STD_FLOOR)` with population statistics in f64.
pub fn standardize_channel(raster: &Raster) -> (Raster, ChannelStats) {
    let mean = raster.mean();
    let std = raster.variance().sqrt();
    let scale = std.max(STD_FLOOR);
    let values = raster
        .values()
        .iter()
        .map(|&v| ((f64::from(v) - mean) / scale) as f32)
        .collect();
    (
        Raster::from_vec(raster.width(), raster.height(), values),
        ChannelStats { mean, std },
    )
}

/// Clip then standardize. The only way this crate chains the two.
pub fn normalize_channel(raster: &Raster, spec: &ChannelSpec) -> (Raster, ChannelStats) {
    standardize_channel(&clip_channel(raster, spec))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizeReport {
    pub channels: Vec<(String, ChannelStats)>,
}

impl NormalizeReport {
    /// One line per channel: `<name> mean <m> std <s>`.
    pub fn to_text(&self) -> String {
        self.channels
            .iter()
            .map(|(n, s)| format!("{n} mean {} std {}\n", s.mean, s.std))
            .collect()
    }
}

/// Normalize every channel of `scene`. Specs are matched to channels by
/// position and the output takes the spec names.
pub fn normalize_scene(
    scene: &Scene,
    specs: &ChannelSpecList,
    workers: usize,
) -> Result<(Scene, NormalizeReport)> {
    if specs.0.len() != scene.channel_count() {
        return Err(invalid!(
            "{} channel specs for a {}-channel scene",
            specs.0.len(),
            scene.channel_count()
        ));
    }
    let pairs: Vec<(&ChannelSpec, &Raster)> = specs.0.iter().zip(scene.rasters()).collect();
    let results = crate::parallel::map_ordered(&pairs, workers, |(spec, raster)| {
        normalize_channel(raster, spec)
    });
    let mut channels = Vec::with_capacity(results.len());
    let mut stats = Vec::with_capacity(results.len());
    for ((raster, st), spec) in results.into_iter().zip(&specs.0) {
        channels.push((spec.name.clone(), raster));
        stats.push((spec.name.clone(), st));
    }
    Ok((Scene::new(channels)?, NormalizeReport { channels: stats }))
}
