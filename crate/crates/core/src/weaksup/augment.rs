use std::fmt;
use std::str::FromStr;

use super::PatchTarget;
use crate::error::{invalid, Error, Result};
use crate::raster::{Raster, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentOp {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 6] = [
        AugmentOp::Identity,
        AugmentOp::Rot90,
        AugmentOp::Rot180,
        AugmentOp::Rot270,
        AugmentOp::FlipH,
        AugmentOp::FlipV,
    ];

    fn needs_square(self) -> bool {
        matches!(self, AugmentOp::Rot90 | AugmentOp::Rot270)
    }

    /// Source pixel `(row, col)` for output pixel `(r, c)` of a `w x h` input.
    fn source(self, r: usize, c: usize, w: usize, h: usize) -> (usize, usize) {
        match self {
            AugmentOp::Identity => (r, c),
            // counter-clockwise quarter turn
            AugmentOp::Rot90 => (c, w - 1 - r),
            AugmentOp::Rot180 => (h - 1 - r, w - 1 - c),
            AugmentOp::Rot270 => (h - 1 - c, r),
            AugmentOp::FlipH => (r, w - 1 - c),
            AugmentOp::FlipV => (h - 1 - r, c),
        }
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentOp::Identity => "identity",
            AugmentOp::Rot90 => "rot90",
            AugmentOp::Rot180 => "rot180",
            AugmentOp::Rot270 => "rot270",
            AugmentOp::FlipH => "flip_h",
            AugmentOp::FlipV => "flip_v",
        })
    }
}

impl FromStr for AugmentOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentOp::ALL
            .into_iter()
            .find(|op| op.to_string() == s)
            .ok_or_else(|| invalid!("unknown augmentation `{s}`"))
    }
}

/// A training patch together with its regional target.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBundle {
    pub patch: Scene,
    pub target: PatchTarget,
}

fn transform(raster: &Raster, op: AugmentOp) -> Raster {
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    let (ow, oh) = if op.needs_square() { (h, w) } else { (w, h) };
    let src = raster.values();
    let mut out = Vec::with_capacity(w * h);
    match op {
        AugmentOp::FlipH | AugmentOp::Rot180 | AugmentOp::FlipV | AugmentOp::Identity => {
            for r in 0..oh {
                let (sr, _) = op.source(r, 0, w, h);
                let row = &src[sr * w..(sr + 1) * w];
                if matches!(op, AugmentOp::FlipH | AugmentOp::Rot180) {
                    out.extend(row.iter().rev());
                } else {
                    out.extend_from_slice(row);
                }
            }
        }
        AugmentOp::Rot90 | AugmentOp::Rot270 => {
            for r in 0..oh {
                out.extend((0..ow).map(|c| {
                    let (sr, sc) = op.source(r, c, w, h);
                    src[sr * w + sc]
                }));
            }
        }
    }
    Raster::from_vec(ow as u32, oh as u32, out)
}

/// Apply one rotation or flip to every channel; the target is unchanged.
pub fn augment_patch(bundle: &PatchBundle, op: AugmentOp) -> Result<PatchBundle> {
    let p = &bundle.patch;
    if op.needs_square() && p.width() != p.height() {
        return Err(invalid!(
            "{op} needs a square patch, got {}x{}",
            p.width(),
            p.height()
        ));
    }
    if op == AugmentOp::Identity {
        return Ok(bundle.clone());
    }
    let channels = p
        .channels()
        .map(|(name, r)| (name.to_string(), transform(r, op)))
        .collect();
    Ok(PatchBundle {
        patch: Scene::new(channels)?,
        target: bundle.target,
    })
}
