//! Rasters, scenes and the RF32 container.
//!
//! RF32 layout (all integers little-endian):
//!
//! | bytes   | content                                   |
//! |---------|-------------------------------------------|
//! | 0..4    | magic `RF32`                              |
//! | 4..8    | width, u32                                |
//! | 8..12   | height, u32                               |
//! | 12..16  | channel count, u32 (1 for a plain raster) |
//! | 16..    | channels, planar, `width*height` binary32 each, row-major |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{format_err, invalid, Error, Result};

pub const RF32_MAGIC: &[u8; 4] = b"RF32";
pub const RF32_HEADER_LEN: usize = 16;

/// Row-major grid of finite binary32 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl Raster {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid!(
                "raster dimensions must be at least 1x1, got {width}x{height}"
            ));
        }
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(invalid!(
                "raster {width}x{height} needs {expected} values, got {}",
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid!(
                "non-finite value {} at (row {}, col {})",
                values[i],
                i / width as usize,
                i % width as usize
            ));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Constructor for values produced by this crate's own kernels.
    pub(crate) fn from_vec(width: u32, height: u32, values: Vec<f32>) -> Self {
        debug_assert!(width >= 1 && height >= 1);
        debug_assert_eq!(values.len(), width as usize * height as usize);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            values,
        }
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn zeros(width: u32, height: u32) -> Result<Self> {
        Self::filled(width, height, 0.0)
    }

    /// Build from a per-pixel function of `(row, col)`.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for r in 0..height as usize {
            for c in 0..width as usize {
                values.push(f(r, c));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width as usize + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        let w = self.width as usize;
        &self.values[row * w..(row + 1) * w]
    }

    /// Mean in double precision, accumulated in index order.
    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v)).sum::<f64>() / self.len() as f64
    }

    /// Population variance in double precision.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.values
            .iter()
            .map(|&v| {
                let d = f64::from(v) - mean;
                d * d
            })
            .sum::<f64>()
            / self.len() as f64
    }

    /// Copy of the `width x height` window whose top-left corner is `(row, col)`.
    pub fn window(&self, row: usize, col: usize, width: u32, height: u32) -> Result<Raster> {
        if width == 0
            || height == 0
            || row + height as usize > self.height as usize
            || col + width as usize > self.width as usize
        {
            return Err(invalid!(
                "window {width}x{height} at ({row},{col}) exceeds raster {}x{}",
                self.width,
                self.height
            ));
        }
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for r in row..row + height as usize {
            values.extend_from_slice(&self.row(r)[col..col + width as usize]);
        }
        Ok(Raster::from_vec(width, height, values))
    }

    /// True when every value is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub(crate) fn same_dims(&self, other: &Raster) -> bool {
        self.dims() == other.dims()
    }
}

/// Named channel stack sharing one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    channels: Vec<(String, Raster)>,
}

impl Scene {
    pub fn new(channels: Vec<(String, Raster)>) -> Result<Self> {
        let Some((_, first)) = channels.first() else {
            return Err(invalid!("scene needs at least one channel"));
        };
        let dims = first.dims();
        for (i, (name, raster)) in channels.iter().enumerate() {
            if raster.dims() != dims {
                return Err(invalid!(
                    "channel `{name}` is {}x{}, expected {}x{}",
                    raster.width(),
                    raster.height(),
                    dims.0,
                    dims.1
                ));
            }
            if channels[..i].iter().any(|(n, _)| n == name) {
                return Err(invalid!("duplicate channel name `{name}`"));
            }
        }
        Ok(Self { channels })
    }

    /// Name unnamed rasters `c0, c1, ...`.
    pub fn from_rasters(rasters: Vec<Raster>) -> Result<Self> {
        Self::new(
            rasters
                .into_iter()
                .enumerate()
                .map(|(i, r)| (format!("c{i}"), r))
                .collect(),
        )
    }

    pub fn with_names(names: &[&str], rasters: Vec<Raster>) -> Result<Self> {
        if names.len() != rasters.len() {
            return Err(invalid!(
                "{} channel names for {} rasters",
                names.len(),
                rasters.len()
            ));
        }
        Self::new(names.iter().map(|n| n.to_string()).zip(rasters).collect())
    }

    pub fn width(&self) -> u32 {
        self.channels[0].1.width()
    }

    pub fn height(&self) -> u32 {
        self.channels[0].1.height()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> impl Iterator<Item = (&str, &Raster)> {
        self.channels.iter().map(|(n, r)| (n.as_str(), r))
    }

    pub fn rasters(&self) -> impl Iterator<Item = &Raster> {
        self.channels.iter().map(|(_, r)| r)
    }

    pub fn channel(&self, name: &str) -> Option<&Raster> {
        self.channels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r)
    }

    pub fn names(&self) -> Vec<&str> {
        self.channels.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn into_rasters(self) -> Vec<Raster> {
        self.channels.into_iter().map(|(_, r)| r).collect()
    }

    /// Same window cut from every channel.
    pub fn window(&self, row: usize, col: usize, width: u32, height: u32) -> Result<Scene> {
        let channels = self
            .channels
            .iter()
            .map(|(n, r)| Ok((n.clone(), r.window(row, col, width, height)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene { channels })
    }
}

/// Serialize a stack of equally sized rasters to RF32 bytes.
pub fn encode_rf32<'a>(rasters: impl IntoIterator<Item = &'a Raster>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_rf32_to(&mut out, rasters)?;
    Ok(out)
}

fn write_rf32_to<'a, W: Write>(
    out: &mut W,
    rasters: impl IntoIterator<Item = &'a Raster>,
) -> Result<()> {
    let rasters: Vec<&Raster> = rasters.into_iter().collect();
    let first = rasters
        .first()
        .ok_or_else(|| invalid!("RF32 needs at least one channel"))?;
    if let Some(bad) = rasters.iter().find(|r| !r.same_dims(first)) {
        return Err(invalid!(
            "RF32 channels must share dimensions: {}x{} vs {}x{}",
            first.width,
            first.height,
            bad.width,
            bad.height
        ));
    }
    let io = |e| Error::Format(format!("write failed: {e}"));
    out.write_all(RF32_MAGIC).map_err(io)?;
    out.write_all(&first.width.to_le_bytes()).map_err(io)?;
    out.write_all(&first.height.to_le_bytes()).map_err(io)?;
    out.write_all(&(rasters.len() as u32).to_le_bytes())
        .map_err(io)?;
    let mut buf = Vec::with_capacity(first.len() * 4);
    for r in &rasters {
        buf.clear();
        for v in &r.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

/// Parse RF32 bytes into its channel rasters.
pub fn decode_rf32(bytes: &[u8]) -> Result<Vec<Raster>> {
    if bytes.len() < RF32_HEADER_LEN {
        return Err(format_err!(
            "truncated header: {} bytes, need {RF32_HEADER_LEN}",
            bytes.len()
        ));
    }
    if &bytes[0..4] != RF32_MAGIC {
        return Err(format_err!(
            "bad magic {:?}, expected \"RF32\"",
            String::from_utf8_lossy(&bytes[0..4])
        ));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let (width, height, channels) = (word(4), word(8), word(12));
    if width == 0 || height == 0 || channels == 0 {
        return Err(format_err!(
            "empty dimensions: width={width} height={height} channels={channels}"
        ));
    }
    let plane = u64::from(width) * u64::from(height);
    let payload = plane
        .checked_mul(u64::from(channels))
        .and_then(|n| n.checked_mul(4))
        .filter(|&n| n <= usize::MAX as u64 - RF32_HEADER_LEN as u64)
        .ok_or_else(|| format_err!("dimension overflow: {width}x{height}x{channels}"))?;
    let available = (bytes.len() - RF32_HEADER_LEN) as u64;
    if available < payload {
        return Err(format_err!(
            "truncated payload: {width}x{height}x{channels} needs {payload} bytes, found {available}"
        ));
    }
    if available > payload {
        return Err(format_err!(
            "{} trailing bytes after {width}x{height}x{channels} payload",
            available - payload
        ));
    }
    let plane = plane as usize;
    let mut out = Vec::with_capacity(channels as usize);
    for (k, chunk) in bytes[RF32_HEADER_LEN..].chunks_exact(plane * 4).enumerate() {
        let values: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(format_err!(
                "non-finite value {} in channel {k} at (row {}, col {})",
                values[i],
                i / width as usize,
                i % width as usize
            ));
        }
        out.push(Raster::from_vec(width, height, values));
    }
    Ok(out)
}

pub fn write_rf32<'a>(path: &Path, rasters: impl IntoIterator<Item = &'a Raster>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_rf32_to(&mut w, rasters)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rf32(path: &Path) -> Result<Vec<Raster>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_rf32(&bytes).map_err(|e| format_err!("{}: {e}", path.display()))
}

pub fn write_raster(raster: &Raster, path: &Path) -> Result<()> {
    write_rf32(path, [raster])
}

/// Read a single-channel RF32 file.
pub fn read_raster(path: &Path) -> Result<Raster> {
    let mut rasters = read_rf32(path)?;
    if rasters.len() != 1 {
        return Err(format_err!(
            "{}: expected 1 channel, found {}",
            path.display(),
            rasters.len()
        ));
    }
    Ok(rasters.pop().unwrap())
}

pub fn write_scene(scene: &Scene, path: &Path) -> Result<()> {
    write_rf32(path, scene.rasters())
}

/// Read a scene; channel names come from `names` when given, else `c0, c1, ...`.
pub fn read_scene(path: &Path, names: Option<&[&str]>) -> Result<Scene> {
    let rasters = read_rf32(path)?;
    match names {
        Some(names) => Scene::with_names(names, rasters),
        None => Scene::from_rasters(rasters),
    }
}
