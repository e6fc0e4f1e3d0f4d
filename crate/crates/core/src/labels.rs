//! Polygon labels stored as row runs, and the PLBL text format.
//!
//! ```text
//! PLBL 1 <width> <height>
//! poly <id> <c_p>
//! run <row> <col> <len>
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{format_err, invalid, Error, Result};
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Run {
    pub row: u32,
    pub col: u32,
    pub len: u32,
}

impl Run {
    pub fn new(row: u32, col: u32, len: u32) -> Self {
        Self { row, col, len }
    }

    fn end(&self) -> u64 {
        u64::from(self.col) + u64::from(self.len)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    pub id: i64,
    /// Regional ice concentration in `[0, 1]`.
    pub c_p: f64,
    pub runs: Vec<Run>,
}

impl Polygon {
    pub fn pixel_count(&self) -> u64 {
        self.runs.iter().map(|r| u64::from(r.len)).sum()
    }

    /// Rectangle `[row, row+h) x [col, col+w)` as one run per row.
    pub fn rect(id: i64, c_p: f64, row: u32, col: u32, w: u32, h: u32) -> Self {
        Self {
            id,
            c_p,
            runs: (row..row + h).map(|r| Run::new(r, col, w)).collect(),
        }
    }
}

/// Disjoint labeled regions on a `width x height` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PolygonLabelSet {
    width: u32,
    height: u32,
    polygons: Vec<Polygon>,
}

impl PolygonLabelSet {
    pub fn new(width: u32, height: u32, polygons: Vec<Polygon>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid!("label grid must be at least 1x1"));
        }
        for (i, p) in polygons.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.c_p) {
                return Err(invalid!("polygon {}: c_p {} outside [0, 1]", p.id, p.c_p));
            }
            if polygons[..i].iter().any(|q| q.id == p.id) {
                return Err(invalid!("duplicate polygon id {}", p.id));
            }
            for run in &p.runs {
                if run.len == 0 {
                    return Err(invalid!(
                        "polygon {}: zero-length run at ({},{})",
                        p.id,
                        run.row,
                        run.col
                    ));
                }
                if run.row >= height || run.end() > u64::from(width) {
                    return Err(invalid!(
                        "polygon {}: run ({},{},{}) outside {width}x{height}",
                        p.id,
                        run.row,
                        run.col,
                        run.len
                    ));
                }
            }
        }
        if let Some((row, col)) = first_overlap(&polygons) {
            return Err(invalid!("label overlap at ({row},{col})"));
        }
        Ok(Self {
            width,
            height,
            polygons,
        })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, Vec::new())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    pub fn polygon(&self, id: i64) -> Result<&Polygon> {
        self.polygons
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| invalid!("unknown polygon id {id}"))
    }

    pub fn labeled_pixels(&self) -> u64 {
        self.polygons.iter().map(Polygon::pixel_count).sum()
    }

    /// 1.0 on every labeled pixel, 0.0 elsewhere.
    pub fn coverage_mask(&self) -> Raster {
        let mut values = vec![0.0f32; self.width as usize * self.height as usize];
        for p in &self.polygons {
            paint(&mut values, self.width, &p.runs, 1.0);
        }
        Raster::from_vec(self.width, self.height, values)
    }

    /// Per-pixel c_p of the owning polygon; 0.0 where unlabeled.
    pub fn concentration_map(&self) -> Raster {
        let mut values = vec![0.0f32; self.width as usize * self.height as usize];
        for p in &self.polygons {
            paint(&mut values, self.width, &p.runs, p.c_p as f32);
        }
        Raster::from_vec(self.width, self.height, values)
    }
}

fn paint(values: &mut [f32], width: u32, runs: &[Run], value: f32) {
    for run in runs {
        let start = run.row as usize * width as usize + run.col as usize;
        values[start..start + run.len as usize].fill(value);
    }
}

/// First pixel covered by two runs (of the same or different polygons).
fn first_overlap(polygons: &[Polygon]) -> Option<(u32, u64)> {
    let mut runs: Vec<(u32, u32, u64)> = polygons
        .iter()
        .flat_map(|p| p.runs.iter().map(|r| (r.row, r.col, r.end())))
        .collect();
    runs.sort_unstable();
    // Sorted by (row, col), the first run starting before the running end
    // of its row marks the first doubly covered pixel.
    let mut row = u32::MAX;
    let mut reach = 0u64;
    for &(r, c, end) in &runs {
        if r != row {
            row = r;
            reach = end;
            continue;
        }
        if u64::from(c) < reach {
            return Some((r, u64::from(c)));
        }
        reach = reach.max(end);
    }
    None
}

/// 0/1 mask of one polygon.
pub fn polygon_mask(labels: &PolygonLabelSet, id: i64) -> Result<Raster> {
    let poly = labels.polygon(id)?;
    let mut values = vec![0.0f32; labels.width as usize * labels.height as usize];
    paint(&mut values, labels.width, &poly.runs, 1.0);
    Ok(Raster::from_vec(labels.width, labels.height, values))
}

pub fn encode_plbl(labels: &PolygonLabelSet) -> String {
    let mut out = format!("PLBL 1 {} {}\n", labels.width, labels.height);
    for p in &labels.polygons {
        writeln!(out, "poly {} {}", p.id, p.c_p).unwrap();
        for r in &p.runs {
            writeln!(out, "run {} {} {}", r.row, r.col, r.len).unwrap();
        }
    }
    out
}

pub fn decode_plbl(text: &str) -> Result<PolygonLabelSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err!("empty label file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let (width, height) = match head.as_slice() {
        ["PLBL", "1", w, h] => (parse::<u32>(w, 1, "width")?, parse::<u32>(h, 1, "height")?),
        ["PLBL", v, ..] => return Err(format_err!("unsupported PLBL version {v}")),
        _ => return Err(format_err!("bad magic: expected `PLBL 1 <width> <height>`")),
    };

    let mut polygons: Vec<Polygon> = Vec::new();
    for (lineno, line) in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["poly", id, c_p] => polygons.push(Polygon {
                id: parse(id, lineno, "polygon id")?,
                c_p: parse(c_p, lineno, "c_p")?,
                runs: Vec::new(),
            }),
            ["run", row, col, len] => {
                let run = Run::new(
                    parse(row, lineno, "row")?,
                    parse(col, lineno, "col")?,
                    parse(len, lineno, "len")?,
                );
                polygons
                    .last_mut()
                    .ok_or_else(|| format_err!("line {lineno}: run before any poly"))?
                    .runs
                    .push(run);
            }
            _ => return Err(format_err!("line {lineno}: unrecognized `{line}`")),
        }
    }
    PolygonLabelSet::new(width, height, polygons)
}

fn parse<T: std::str::FromStr>(tok: &str, lineno: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| format_err!("line {lineno}: bad {what} `{tok}`"))
}

pub fn write_labels(labels: &PolygonLabelSet, path: &Path) -> Result<()> {
    std::fs::write(path, encode_plbl(labels)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<PolygonLabelSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_plbl(&text).map_err(|e| match e {
        Error::Invalid(m) | Error::Format(m) => format_err!("{}: {m}", path.display()),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn block_polygon_has_hundred_pixels() {
        let text = "PLBL 1 20 20\npoly 1 0.30\n".to_string()
            + &(0..10)
                .map(|r| format!("run {r} 3 10\n"))
                .collect::<String>();
        let labels = decode_plbl(&text).unwrap();
        assert_eq!(labels.labeled_pixels(), 100);
        assert_eq!(labels.polygon(1).unwrap().c_p, 0.3);
    }

    #[test]
    fn shared_pixel_is_an_overlap() {
        let text = "PLBL 1 10 10\npoly 1 0.2\nrun 5 0 6\npoly 2 0.4\nrun 5 5 3\n";
        let err = decode_plbl(text).unwrap_err().to_string();
        assert_eq!(err, "label overlap at (5,5)");
    }

    #[test]
    fn swallowed_run_is_an_overlap() {
        let polys = vec![
            Polygon {
                id: 1,
                c_p: 0.1,
                runs: vec![Run::new(0, 0, 10)],
            },
            Polygon {
                id: 2,
                c_p: 0.1,
                runs: vec![Run::new(0, 2, 1)],
            },
            Polygon {
                id: 3,
                c_p: 0.1,
                runs: vec![Run::new(0, 4, 1)],
            },
        ];
        let err = PolygonLabelSet::new(10, 1, polys).unwrap_err().to_string();
        assert_eq!(err, "label overlap at (0,2)");
    }

    #[test]
    fn empty_label_set_is_valid() {
        let labels = decode_plbl("PLBL 1 4 4\n").unwrap();
        assert_eq!(labels.labeled_pixels(), 0);
        assert_eq!(labels.coverage_mask().mean(), 0.0);
    }

    #[test]
    fn invalid_files_rejected() {
        assert!(decode_plbl("PLBL 1 4 4\npoly 1 1.5\nrun 0 0 1\n").is_err());
        assert!(decode_plbl("PLBL 1 4 4\npoly 1 -0.1\n").is_err());
        assert!(decode_plbl("PLBL 1 4 4\nrun 0 0 1\n").is_err());
        assert!(decode_plbl("PLBL 1 4 4\npoly 1 0.5\nrun 0 2 3\n").is_err());
        assert!(decode_plbl("PLBL 1 4 4\npoly 1 0.5\nrun 4 0 1\n").is_err());
        assert!(decode_plbl("PLBL 1 4 4\npoly 1 0.5\npoly 1 0.5\n").is_err());
        assert!(decode_plbl("XXXX 1 4 4\n")
            .unwrap_err()
            .to_string()
            .contains("bad magic"));
        assert!(decode_plbl("PLBL 2 4 4\n").is_err());
    }

    #[test]
    fn mask_of_single_run() {
        let labels = PolygonLabelSet::new(
            4,
            4,
            vec![Polygon {
                id: 7,
                c_p: 0.5,
                runs: vec![Run::new(0, 0, 4)],
            }],
        )
        .unwrap();
        let mask = polygon_mask(&labels, 7).unwrap();
        assert_eq!(mask.values().iter().sum::<f32>(), 4.0);
        assert!(polygon_mask(&labels, 999).is_err());
    }

    #[test]
    fn mask_of_disjoint_runs_matches_enumeration() {
        let runs = vec![
            Run::new(0, 0, 5),
            Run::new(0, 10, 7),
            Run::new(3, 2, 11),
            Run::new(9, 0, 14),
        ];
        // Enumerate the pixels one by one as the oracle.
        let mut pixels = std::collections::BTreeSet::new();
        for r in &runs {
            for c in r.col..r.col + r.len {
                pixels.insert((r.row, c));
            }
        }
        assert_eq!(pixels.len(), 37);
        let labels = PolygonLabelSet::new(
            20,
            10,
            vec![Polygon {
                id: 3,
                c_p: 0.0,
                runs,
            }],
        )
        .unwrap();
        let mask = polygon_mask(&labels, 3).unwrap();
        assert!(mask.is_binary());
        assert_eq!(mask.values().iter().filter(|&&v| v == 1.0).count(), 37);
        for &(r, c) in &pixels {
            assert_eq!(mask.get(r as usize, c as usize), 1.0);
        }
    }

    #[test]
    fn c_p_survives_at_shortest_decimal() {
        let c_p = 0.1f64 + 0.2f64;
        let labels = PolygonLabelSet::new(2, 1, vec![Polygon::rect(-4, c_p, 0, 0, 2, 1)]).unwrap();
        let text = encode_plbl(&labels);
        assert!(text.contains("poly -4 0.30000000000000004\n"), "{text}");
        assert_eq!(decode_plbl(&text).unwrap(), labels);
    }

    prop_compose! {
        // Disjoint polygons: each row is cut into random segments, each
        // segment assigned to a polygon or left unlabeled.
        fn label_set()(width in 1u32..40, height in 1u32..20, n_poly in 0usize..5, seed in any::<u64>())
            -> PolygonLabelSet
        {
            let mut state = seed | 1;
            let mut next = |m: u32| {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                (state % u64::from(m)) as u32
            };
            let mut polys: Vec<Polygon> = (0..n_poly)
                .map(|i| Polygon { id: i as i64 * 3 - 2, c_p: f64::from(next(1001)) / 1000.0, runs: vec![] })
                .collect();
            for row in 0..height {
                let mut col = 0;
                while col < width {
                    let len = 1 + next(width - col);
                    let owner = next(n_poly as u32 + 1) as usize;
                    if owner < n_poly {
                        polys[owner].runs.push(Run::new(row, col, len));
                    }
                    col += len;
                }
            }
            PolygonLabelSet::new(width, height, polys).unwrap()
        }
    }

    proptest! {
        #[test]
        fn label_round_trip_and_mask_sums(labels in label_set()) {
            let back = decode_plbl(&encode_plbl(&labels)).unwrap();
            prop_assert_eq!(&back, &labels);
            let mut total = 0.0f64;
            for p in labels.polygons() {
                let mask = polygon_mask(&labels, p.id).unwrap();
                prop_assert!(mask.is_binary());
                let sum: f64 = mask.values().iter().map(|&v| f64::from(v)).sum();
                prop_assert_eq!(sum as u64, p.pixel_count());
                total += sum;
            }
            // Disjointness: the union has exactly as many pixels as the parts.
            let union: f64 = labels.coverage_mask().values().iter().map(|&v| f64::from(v)).sum();
            prop_assert_eq!(union, total);
        }
    }
}
