//! Sliding-window tile plans and mean-of-overlaps stitching.
//!
//! Per axis the window offsets are `0, s, 2s, ...` while the window fits;
//! if that grid leaves a remainder, one final offset `extent - window` is
//! appended so the windows cover every pixel without padding.
//!
//! Stitching sums tile values per pixel in f64, in plan order, and divides by
//! the per-pixel count once at the end. Workers split the output into
//! disjoint row bands, so each pixel sees the same additions in the same
//! order whatever the worker count.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::parallel::for_each_row_band;
use crate::raster::Raster;

pub const DEFAULT_WINDOW: u32 = 256;
pub const DEFAULT_STRIDE: u32 = 64;

/// `window=<n>,stride=<n>` as accepted by the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlanSpec {
    pub window: u32,
    pub stride: u32,
}

impl Default for PlanSpec {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
        }
    }
}

impl FromStr for PlanSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = PlanSpec::default();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| invalid!("plan item `{item}` is not key=value"))?;
            let value: u32 = value
                .parse()
                .map_err(|_| invalid!("plan item `{item}`: bad integer"))?;
            match key {
                "window" => spec.window = value,
                "stride" => spec.stride = value,
                _ => return Err(invalid!("unknown plan key `{key}`")),
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for PlanSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "window={},stride={}", self.window, self.stride)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilePlan {
    window: u32,
    stride: u32,
    width: u32,
    height: u32,
    /// `(row, col)` of each window's top-left corner, row-major.
    offsets: Vec<(u32, u32)>,
}

/// Offsets along one axis.
pub fn axis_offsets(extent: u32, window: u32, stride: u32) -> Vec<u32> {
    let mut offsets: Vec<u32> = (0..)
        .map(|k| k * stride)
        .take_while(|&o| o + window <= extent)
        .collect();
    let last = extent - window;
    if offsets.last() != Some(&last) {
        offsets.push(last);
    }
    offsets
}

pub fn plan_tiles(width: u32, height: u32, window: u32, stride: u32) -> Result<TilePlan> {
    if window == 0 || stride == 0 {
        return Err(invalid!(
            "window ({window}) and stride ({stride}) must be positive"
        ));
    }
    if window > width || window > height {
        return Err(invalid!(
            "window {window} larger than scene {width}x{height}"
        ));
    }
    let rows = axis_offsets(height, window, stride);
    let cols = axis_offsets(width, window, stride);
    for axis in [&rows, &cols] {
        if axis.windows(2).any(|p| p[1] - p[0] > window) {
            return Err(invalid!(
                "stride {stride} exceeds window {window} and leaves uncovered pixels"
            ));
        }
    }
    let offsets = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(TilePlan {
        window,
        stride,
        width,
        height,
        offsets,
    })
}

impl TilePlan {
    pub fn from_spec(width: u32, height: u32, spec: PlanSpec) -> Result<Self> {
        plan_tiles(width, height, spec.window, spec.stride)
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn scene_dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn offsets(&self) -> &[(u32, u32)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Per-pixel number of windows covering it.
pub fn coverage_count(plan: &TilePlan) -> Raster {
    let (w, h) = plan.scene_dims();
    let mut count = vec![0u32; w as usize * h as usize];
    for &(r0, c0) in &plan.offsets {
        for r in r0..r0 + plan.window {
            let row = &mut count[r as usize * w as usize..][..w as usize];
            for c in &mut row[c0 as usize..(c0 + plan.window) as usize] {
                *c += 1;
            }
        }
    }
    Raster::from_vec(w, h, count.into_iter().map(|c| c as f32).collect())
}

/// Running f64 sums and counts for a plan, fed tiles strictly in plan order.
#[derive(Debug)]
pub struct Accumulator<'p> {
    plan: &'p TilePlan,
    sum: Vec<f64>,
    count: Vec<u32>,
    committed: usize,
}

impl<'p> Accumulator<'p> {
    pub fn new(plan: &'p TilePlan) -> Self {
        let n = plan.width as usize * plan.height as usize;
        Self {
            plan,
            sum: vec![0.0; n],
            count: vec![0; n],
            committed: 0,
        }
    }

    pub fn committed(&self) -> usize {
        self.committed
    }

    /// Add the next `tiles.len()` tiles of the plan.
    pub fn commit(&mut self, tiles: &[Raster], workers: usize) -> Result<()> {
        let plan = self.plan;
        let end = self.committed + tiles.len();
        if end > plan.len() {
            return Err(invalid!(
                "extra tiles: plan has {} tiles, got {end}",
                plan.len()
            ));
        }
        for (i, t) in tiles.iter().enumerate() {
            if t.dims() != (plan.window, plan.window) {
                return Err(invalid!(
                    "tile {} is {}x{}, window is {}",
                    self.committed + i,
                    t.width(),
                    t.height(),
                    plan.window
                ));
            }
        }
        let offsets = &plan.offsets[self.committed..end];
        let width = plan.width as usize;
        let window = plan.window as usize;

        // Zip sums and counts row-wise so both bands line up.
        let mut rows: Vec<(&mut [f64], &mut [u32])> = self
            .sum
            .chunks_mut(width)
            .zip(self.count.chunks_mut(width))
            .collect();
        for_each_row_band(&mut rows, 1, workers, |first_row, band| {
            for (local, (sum_row, count_row)) in band.iter_mut().enumerate() {
                let r = first_row + local;
                for (&(r0, c0), tile) in offsets.iter().zip(tiles) {
                    let (r0, c0) = (r0 as usize, c0 as usize);
                    if r < r0 || r >= r0 + window {
                        continue;
                    }
                    let src = tile.row(r - r0);
                    for ((s, n), &v) in sum_row[c0..c0 + window]
                        .iter_mut()
                        .zip(&mut count_row[c0..c0 + window])
                        .zip(src)
                    {
                        *s += f64::from(v);
                        *n += 1;
                    }
                }
            }
        });
        self.committed = end;
        Ok(())
    }

    /// Divide once per pixel and round to binary32.
    pub fn finish(self) -> Result<Raster> {
        if self.committed != self.plan.len() {
            return Err(invalid!(
                "missing tiles: plan has {}, committed {}",
                self.plan.len(),
                self.committed
            ));
        }
        if let Some(i) = self.count.iter().position(|&c| c == 0) {
            let w = self.plan.width as usize;
            return Err(invalid!("pixel ({},{}) not covered", i / w, i % w));
        }
        let values = self
            .sum
            .iter()
            .zip(&self.count)
            .map(|(&s, &n)| (s / f64::from(n)) as f32)
            .collect();
        Ok(Raster::from_vec(self.plan.width, self.plan.height, values))
    }
}

/// Mean of overlapping tile logits. `tiles[k]` belongs to `plan.offsets()[k]`.
pub fn stitch(tiles: &[Raster], plan: &TilePlan, workers: usize) -> Result<Raster> {
    if tiles.len() != plan.len() {
        return Err(invalid!(
            "{} tiles for a {}-tile plan",
            tiles.len(),
            plan.len()
        ));
    }
    let mut acc = Accumulator::new(plan);
    acc.commit(tiles, workers)?;
    acc.finish()
}
