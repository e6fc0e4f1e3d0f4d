//! Polygon-level concentration consistency and pixel accuracy.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{format_err, invalid, Error, Result};
use crate::labels::{Polygon, PolygonLabelSet};
use crate::raster::Raster;

#[derive(Clone, Debug, PartialEq)]
pub struct PolygonReport {
    pub id: i64,
    pub target_cp: f64,
    pub predicted_cp: f64,
    pub abs_error: f64,
    pub pixel_count: u64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SceneReport {
    pub polygons: Vec<PolygonReport>,
    pub overall_accuracy: Option<f64>,
    /// Pixels compared for the accuracy, when present.
    pub accuracy_pixels: Option<u64>,
}

impl SceneReport {
    pub fn max_abs_error(&self) -> Option<f64> {
        self.polygons.iter().map(|p| p.abs_error).reduce(f64::max)
    }

    /// Area-weighted mean of the predicted concentrations.
    pub fn weighted_prediction(&self) -> Option<f64> {
        let n: u64 = self.polygons.iter().map(|p| p.pixel_count).sum();
        if n == 0 {
            return None;
        }
        let s: f64 = self
            .polygons
            .iter()
            .map(|p| p.predicted_cp * p.pixel_count as f64)
            .sum();
        Some(s / n as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,target,predicted,abs_error,pixels\n");
        for p in &self.polygons {
            writeln!(
                out,
                "{},{},{},{},{}",
                p.id, p.target_cp, p.predicted_cp, p.abs_error, p.pixel_count
            )
            .unwrap();
        }
        if let (Some(acc), Some(n)) = (self.overall_accuracy, self.accuracy_pixels) {
            writeln!(out, "accuracy,,{acc},,{n}").unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, "id,target,predicted,abs_error,pixels")) => {}
            _ => return Err(format_err!("missing report header")),
        }
        let mut report = SceneReport::default();
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || format_err!("report line {}: `{line}`", i + 1);
            if f.len() != 5 {
                return Err(bad());
            }
            if f[0] == "accuracy" {
                report.overall_accuracy = Some(f[2].parse().map_err(|_| bad())?);
                report.accuracy_pixels = Some(f[4].parse().map_err(|_| bad())?);
                continue;
            }
            report.polygons.push(PolygonReport {
                id: f[0].parse().map_err(|_| bad())?,
                target_cp: f[1].parse().map_err(|_| bad())?,
                predicted_cp: f[2].parse().map_err(|_| bad())?,
                abs_error: f[3].parse().map_err(|_| bad())?,
                pixel_count: f[4].parse().map_err(|_| bad())?,
            });
        }
        Ok(report)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    /// Aligned table for terminal output.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:>8} {:>8} {:>10} {:>10} {:>9}\n",
            "polygon", "target", "predicted", "abs_error", "pixels"
        );
        for p in &self.polygons {
            writeln!(
                out,
                "{:>8} {:>8.3} {:>10.3} {:>10.3} {:>9}",
                p.id, p.target_cp, p.predicted_cp, p.abs_error, p.pixel_count
            )
            .unwrap();
        }
        if let Some(acc) = self.overall_accuracy {
            writeln!(out, "overall accuracy {:.4}", acc).unwrap();
        }
        out
    }
}

fn check_mask(mask: &Raster, labels: &PolygonLabelSet) -> Result<()> {
    if mask.dims() != (labels.width(), labels.height()) {
        return Err(invalid!(
            "mask is {}x{}, labels are {}x{}",
            mask.width(),
            mask.height(),
            labels.width(),
            labels.height()
        ));
    }
    if let Some(v) = mask.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid!("mask value {v} outside [0, 1]"));
    }
    Ok(())
}

fn mean_over(mask: &Raster, poly: &Polygon) -> Result<f64> {
    let n = poly.pixel_count();
    if n == 0 {
        return Err(invalid!("polygon {} is empty", poly.id));
    }
    let w = mask.width() as usize;
    let v = mask.values();
    let sum: f64 = poly
        .runs
        .iter()
        .map(|r| {
            let start = r.row as usize * w + r.col as usize;
            v[start..start + r.len as usize]
                .iter()
                .map(|&x| f64::from(x))
                .sum::<f64>()
        })
        .sum();
    Ok(sum / n as f64)
}

/// Mean of `mask` over the pixels of polygon `id`.
pub fn polygon_concentration(mask: &Raster, labels: &PolygonLabelSet, id: i64) -> Result<f64> {
    check_mask(mask, labels)?;
    mean_over(mask, labels.polygon(id)?)
}

/// Fraction of pixels where the two 0/1 rasters agree.
pub fn pixel_accuracy(mask: &Raster, truth: &Raster) -> Result<f64> {
    if mask.dims() != truth.dims() {
        return Err(invalid!(
            "mask is {}x{}, truth is {}x{}",
            mask.width(),
            mask.height(),
            truth.width(),
            truth.height()
        ));
    }
    if !mask.is_binary() {
        return Err(invalid!("mask is not 0/1-valued"));
    }
    if !truth.is_binary() {
        return Err(invalid!("truth is not 0/1-valued"));
    }
    let correct = mask
        .values()
        .iter()
        .zip(truth.values())
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / mask.len() as f64)
}

/// One row per polygon, sorted by id; accuracy only when `truth` is given.
pub fn scene_report(
    mask: &Raster,
    labels: &PolygonLabelSet,
    truth: Option<&Raster>,
) -> Result<SceneReport> {
    check_mask(mask, labels)?;
    let mut polygons = labels
        .polygons()
        .iter()
        .map(|p| {
            let predicted_cp = mean_over(mask, p)?;
            Ok(PolygonReport {
                id: p.id,
                target_cp: p.c_p,
                predicted_cp,
                abs_error: (p.c_p - predicted_cp).abs(),
                pixel_count: p.pixel_count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    polygons.sort_by_key(|p| p.id);
    let overall_accuracy = truth.map(|t| pixel_accuracy(mask, t)).transpose()?;
    Ok(SceneReport {
        polygons,
        overall_accuracy,
        accuracy_pixels: overall_accuracy.map(|_| mask.len() as u64),
    })
}

/// Single-pixel 4-connected components of either class in a 0/1 mask.
pub fn count_isolated_pixels(mask: &Raster) -> Result<u64> {
    if !mask.is_binary() {
        return Err(invalid!("mask is not 0/1-valued"));
    }
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let v = mask.values();
    let mut count = 0;
    for r in 0..h {
        for c in 0..w {
            let x = v[r * w + c];
            let differs = |rr: usize, cc: usize| v[rr * w + cc] != x;
            let isolated = (r == 0 || differs(r - 1, c))
                && (r + 1 == h || differs(r + 1, c))
                && (c == 0 || differs(r, c - 1))
                && (c + 1 == w || differs(r, c + 1));
            // a 1x1 raster has no neighbours to differ from
            if isolated && w * h > 1 {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// 8-bit binary PGM with value `round(255 * p)`, `p` clamped to `[0, 1]`.
pub fn encode_pgm(raster: &Raster) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    out.extend(
        raster
            .values()
            .iter()
            .map(|&p| (255.0 * f64::from(p).clamp(0.0, 1.0)).round() as u8),
    );
    out
}

pub fn write_pgm(raster: &Raster, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_pgm(raster))
        .map_err(|e| Error::io(path, e))
}
