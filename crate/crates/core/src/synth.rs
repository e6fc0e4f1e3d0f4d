//! Synthetic SAR-like scenes with exact per-pixel truth.
//!
//! A truth mask (1 = ice) is drawn first, either as solid pack ice cut by
//! straight water leads or as ice disks scattered over water. Channels are
//! rendered from it:
//!
//! * SAR channels: the clean class backscatter (dB) is converted to linear
//!   intensity, multiplied by unit-mean Gamma speckle with `L` looks, and
//!   converted back to dB.
//! * Radiometer channels: a noise-free, heavily blurred copy of the truth
//!   mask mapped between the water and ice brightness temperatures.
//!
//! Weak labels are a fixed grid of square polygons whose concentration is the
//! truth mean inside each square.
//!
//! All randomness comes from [`CounterRng`] streams derived from the seed by
//! fixed labels (`truth`, `speckle/<channel>`, `outlier`).

use std::str::FromStr;

use crate::calibrate::percentiles;
use crate::error::{invalid, Error, Result};
use crate::labels::{Polygon, PolygonLabelSet};
use crate::parallel::for_each_row_band;
use crate::raster::{Raster, Scene};
use crate::regularize::{blur, BlurSpec};
use crate::rng::CounterRng;

pub const DEFAULT_POLYGON_SIZE: u32 = 128;
/// Upper bound on drawn leads or floes.
const MAX_FEATURES: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    PackIceWithLeads,
    FragmentedFloes,
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leads" | "pack_ice_with_leads" | "winter" => Ok(Pattern::PackIceWithLeads),
            "floes" | "fragmented_floes" | "fragmented" | "summer" => Ok(Pattern::FragmentedFloes),
            _ => Err(invalid!("unknown pattern `{s}` (expected leads or floes)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    /// Backscatter in dB with multiplicative speckle.
    Sar,
    /// Coarse brightness temperature in K.
    Radiometer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelContrast {
    pub name: String,
    pub kind: ChannelKind,
    pub ice_mean: f64,
    pub water_mean: f64,
}

impl ChannelContrast {
    pub fn sar(name: &str, ice_db: f64, water_db: f64) -> Self {
        Self {
            name: name.into(),
            kind: ChannelKind::Sar,
            ice_mean: ice_db,
            water_mean: water_db,
        }
    }

    pub fn radiometer(name: &str, ice_k: f64, water_k: f64) -> Self {
        Self {
            name: name.into(),
            kind: ChannelKind::Radiometer,
            ice_mean: ice_k,
            water_mean: water_k,
        }
    }

    /// HH, HV and a brightness-temperature channel with winter-like contrasts.
    pub fn default_set() -> Vec<Self> {
        vec![
            Self::sar("HH", -14.0, -20.0),
            Self::sar("HV", -23.0, -28.0),
            Self::radiometer("TB", 245.0, 175.0),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub width: u32,
    pub height: u32,
    pub pattern: Pattern,
    pub lead_width: u32,
    /// Target ice fraction: leads are cut until the ice fraction drops to it,
    /// floes are added until it is reached.
    pub floe_density: f64,
    /// Floe pattern only: the local target density varies linearly across
    /// columns from `floe_density - ramp/2` to `floe_density + ramp/2`.
    pub density_ramp: f64,
    /// Floe radius range in pixels.
    pub floe_radius: (f64, f64),
    pub speckle_looks: u32,
    pub channels: Vec<ChannelContrast>,
    /// Gaussian sigma (pixels) of the radiometer footprint.
    pub radiometer_sigma: f64,
    pub polygon_size: u32,
    pub seed: u64,
}

impl SynthSpec {
    /// Compact pack ice with narrow leads.
    pub fn leads(width: u32, height: u32, seed: u64) -> Self {
        Self {
            width,
            height,
            pattern: Pattern::PackIceWithLeads,
            lead_width: 5,
            floe_density: 0.9,
            density_ramp: 0.0,
            floe_radius: (4.0, 16.0),
            speckle_looks: 4,
            channels: ChannelContrast::default_set(),
            radiometer_sigma: 24.0,
            polygon_size: DEFAULT_POLYGON_SIZE,
            seed,
        }
    }

    /// Fragmented marginal-ice-zone floes.
    pub fn floes(width: u32, height: u32, seed: u64) -> Self {
        Self {
            pattern: Pattern::FragmentedFloes,
            floe_density: 0.3,
            ..Self::leads(width, height, seed)
        }
    }

    /// Fragmented summer floes: sparse, small and noisy, denser to the east.
    pub fn summer(width: u32, height: u32, seed: u64) -> Self {
        Self {
            pattern: Pattern::FragmentedFloes,
            floe_density: 0.35,
            density_ramp: 0.5,
            floe_radius: (3.0, 12.0),
            speckle_looks: 1,
            ..Self::leads(width, height, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.width == 0 || self.height == 0 {
            problems.push(format!(
                "dimensions {}x{} must be positive",
                self.width, self.height
            ));
        }
        if self.lead_width == 0 {
            problems.push("lead_width must be >= 1".into());
        } else if self.pattern == Pattern::PackIceWithLeads
            && self.lead_width >= self.width.min(self.height)
        {
            problems.push(format!(
                "dimensions {}x{} too small for lead_width {}",
                self.width, self.height, self.lead_width
            ));
        }
        if !(0.0..=1.0).contains(&self.floe_density) {
            problems.push(format!("floe_density {} outside [0, 1]", self.floe_density));
        }
        if !(self.density_ramp >= 0.0 && self.density_ramp <= 2.0) {
            problems.push(format!("density_ramp {} outside [0, 2]", self.density_ramp));
        }
        let (rmin, rmax) = self.floe_radius;
        if !(rmin > 0.0 && rmin <= rmax) {
            problems.push(format!("floe radius range ({rmin}, {rmax}) invalid"));
        } else if self.pattern == Pattern::FragmentedFloes
            && 2.0 * rmin >= f64::from(self.width.min(self.height))
        {
            problems.push(format!(
                "dimensions {}x{} too small for floe radius {rmin}",
                self.width, self.height
            ));
        }
        if self.speckle_looks == 0 {
            problems.push("speckle_looks must be >= 1".into());
        }
        if self.channels.is_empty() {
            problems.push("at least one channel required".into());
        }
        if self.polygon_size == 0 {
            problems.push("polygon_size must be >= 1".into());
        }
        if !(self.radiometer_sigma >= 0.0) {
            problems.push("radiometer_sigma must be >= 0".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub scene: Scene,
    pub truth_mask: Raster,
    pub labels: PolygonLabelSet,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthTruth> {
    spec.validate()?;
    let root = CounterRng::new(spec.seed);
    let truth = match spec.pattern {
        Pattern::PackIceWithLeads => draw_leads(spec, root.stream("truth")),
        Pattern::FragmentedFloes => draw_floes(spec, root.stream("truth")),
    };
    let (w, h) = (spec.width, spec.height);
    let truth_f32: Vec<f32> = truth.iter().map(|&t| f32::from(t)).collect();
    let truth_mask = Raster::from_vec(w, h, truth_f32);

    let mut channels = Vec::with_capacity(spec.channels.len());
    for contrast in &spec.channels {
        let raster = match contrast.kind {
            ChannelKind::Sar => render_sar(
                &truth,
                w,
                contrast,
                spec.speckle_looks,
                root.stream(&format!("speckle/{}", contrast.name)),
            ),
            ChannelKind::Radiometer => {
                render_radiometer(&truth_mask, contrast, spec.radiometer_sigma)
            }
        };
        channels.push((contrast.name.clone(), raster));
    }
    let scene = Scene::new(channels)?;
    let labels = grid_labels(&truth_mask, spec.polygon_size)?;
    Ok(SynthTruth {
        scene,
        truth_mask,
        labels,
    })
}

fn render_sar(
    truth: &[u8],
    width: u32,
    c: &ChannelContrast,
    looks: u32,
    rng: CounterRng,
) -> Raster {
    let lin_ice = 10f64.powf(c.ice_mean / 10.0);
    let lin_water = 10f64.powf(c.water_mean / 10.0);
    let mut out = vec![0.0f32; truth.len()];
    let w = width as usize;
    for_each_row_band(
        &mut out,
        w,
        crate::parallel::default_workers(),
        |first_row, band| {
            let base = first_row * w;
            for (i, o) in band.iter_mut().enumerate() {
                let idx = base + i;
                let clean = if truth[idx] == 1 { lin_ice } else { lin_water };
                let g = rng.gamma_unit_mean(idx as u64, looks);
                *o = (10.0 * (clean * g).log10()) as f32;
            }
        },
    );
    Raster::from_vec(width, (truth.len() / w) as u32, out)
}

fn render_radiometer(truth: &Raster, c: &ChannelContrast, sigma: f64) -> Raster {
    let smooth = blur(
        truth,
        &BlurSpec::new(sigma).expect("validated sigma"),
        crate::parallel::default_workers(),
    );
    let values = smooth
        .values()
        .iter()
        .map(|&t| (c.water_mean + (c.ice_mean - c.water_mean) * f64::from(t)) as f32)
        .collect();
    Raster::from_vec(truth.width(), truth.height(), values)
}

/// Solid ice, then straight water strips until the ice fraction reaches the target.
fn draw_leads(spec: &SynthSpec, rng: CounterRng) -> Vec<u8> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let n = w * h;
    if spec.floe_density <= 0.0 {
        return vec![0; n];
    }
    let mut truth = vec![1u8; n];
    let mut ice = n;
    let target = (spec.floe_density * n as f64).floor() as usize;
    let half = f64::from(spec.lead_width) / 2.0;
    let mut cursor = rng.cursor();
    let mut leads = 0;
    while ice > target && leads < MAX_FEATURES {
        leads += 1;
        let cx = cursor.range(0.0, w as f64);
        let cy = cursor.range(0.0, h as f64);
        let theta = cursor.range(0.0, std::f64::consts::PI);
        // Unit normal of the strip; a pixel centre p is inside when
        // -half <= (p - c) . n < half.
        let (nx, ny) = (-theta.sin(), theta.cos());
        let mut carve = |idx: usize| {
            if truth[idx] == 1 {
                truth[idx] = 0;
                ice -= 1;
            }
        };
        if nx.abs() >= ny.abs() {
            for y in 0..h {
                let offset = (y as f64 + 0.5 - cy) * ny;
                // Solve for x: (x + 0.5 - cx) * nx + offset in [-half, half).
                let a = (-half - offset) / nx + cx - 0.5;
                let b = (half - offset) / nx + cx - 0.5;
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                for x in span(lo, hi, w) {
                    let d = (x as f64 + 0.5 - cx) * nx + offset;
                    if (-half..half).contains(&d) {
                        carve(y * w + x);
                    }
                }
            }
        } else {
            for x in 0..w {
                let offset = (x as f64 + 0.5 - cx) * nx;
                let a = (-half - offset) / ny + cy - 0.5;
                let b = (half - offset) / ny + cy - 0.5;
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                for y in span(lo, hi, h) {
                    let d = (y as f64 + 0.5 - cy) * ny + offset;
                    if (-half..half).contains(&d) {
                        carve(y * w + x);
                    }
                }
            }
        }
    }
    truth
}

/// Integer indices in `[floor(lo), ceil(hi)]` clipped to `[0, n)`.
fn span(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let start = lo.floor().max(0.0) as usize;
    let end = (hi.ceil() + 1.0).clamp(0.0, n as f64) as usize;
    start.min(end)..end
}

/// Local target density of the floe pattern at column `x`.
fn local_density(spec: &SynthSpec, x: f64) -> f64 {
    let t = x / f64::from(spec.width) - 0.5;
    (spec.floe_density + spec.density_ramp * t).clamp(0.0, 1.0)
}

/// Ice disks over water; disk centres are thinned by the local target
/// density and drawing stops once the global mean target is reached.
fn draw_floes(spec: &SynthSpec, rng: CounterRng) -> Vec<u8> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let n = w * h;
    let mean_target = (0..w)
        .map(|x| local_density(spec, x as f64 + 0.5))
        .sum::<f64>()
        / w as f64;
    let max_target = (0..w)
        .map(|x| local_density(spec, x as f64 + 0.5))
        .fold(0.0, f64::max);
    if max_target <= 0.0 {
        return vec![0; n];
    }
    if mean_target >= 1.0 {
        return vec![1; n];
    }
    let target = (mean_target * n as f64).ceil() as usize;
    let mut truth = vec![0u8; n];
    let mut ice = 0usize;
    let mut cursor = rng.cursor();
    let (rmin, rmax) = spec.floe_radius;
    let mut drawn = 0;
    while ice < target && drawn < MAX_FEATURES {
        let cx = cursor.range(0.0, w as f64);
        let cy = cursor.range(0.0, h as f64);
        let r = cursor.range(rmin, rmax);
        let keep = cursor.uniform();
        if keep * max_target > local_density(spec, cx) {
            continue;
        }
        drawn += 1;
        let r2 = r * r;
        for y in span(cy - r - 0.5, cy + r - 0.5, h) {
            let dy = y as f64 + 0.5 - cy;
            for x in span(cx - r - 0.5, cx + r - 0.5, w) {
                let dx = x as f64 + 0.5 - cx;
                if dx * dx + dy * dy <= r2 {
                    let idx = y * w + x;
                    if truth[idx] == 0 {
                        truth[idx] = 1;
                        ice += 1;
                    }
                }
            }
        }
    }
    truth
}

/// Square polygons of side `size` (smaller at the right/bottom edges);
/// ids count row-major from 1 and each c_p is the truth mean inside.
pub fn grid_labels(truth: &Raster, size: u32) -> Result<PolygonLabelSet> {
    let (w, h) = truth.dims();
    let mut polygons = Vec::new();
    let mut id = 1;
    for row in (0..h).step_by(size as usize) {
        for col in (0..w).step_by(size as usize) {
            let pw = size.min(w - col);
            let ph = size.min(h - row);
            let window = truth.window(row as usize, col as usize, pw, ph)?;
            polygons.push(Polygon::rect(id, window.mean(), row, col, pw, ph));
            id += 1;
        }
    }
    PolygonLabelSet::new(w, h, polygons)
}

/// Set one pixel to `z_98 + factor * (z_98 - z_2)`; returns the raster and
/// the `(row, col)` of the spike. Position comes from the `outlier` stream.
pub fn inject_point_outlier(
    logits: &Raster,
    factor: f64,
    seed: u64,
) -> Result<(Raster, (usize, usize))> {
    if !(factor > 1.0) {
        return Err(invalid!("outlier factor must exceed 1, got {factor}"));
    }
    let z = percentiles(logits.values(), &[2.0, 98.0])?;
    let range = z[1] - z[0];
    if !(range > 0.0) {
        return Err(invalid!("degenerate logit range: z_2 == z_98 == {}", z[0]));
    }
    let spike = z[1] + factor * range;
    let mut cursor = CounterRng::new(seed).stream("outlier").cursor();
    let idx = cursor.below(logits.len() as u64) as usize;
    let mut values = logits.values().to_vec();
    values[idx] = spike as f32;
    let w = logits.width() as usize;
    Ok((
        Raster::new(logits.width(), logits.height(), values)?,
        (idx / w, idx % w),
    ))
}
