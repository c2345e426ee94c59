use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{Image, Mask, Rect};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    SineGrid,
    Checker,
    Stripes,
}

impl TextureKind {
    pub fn name(self) -> &'static str {
        match self {
            TextureKind::SineGrid => "sine-grid",
            TextureKind::Checker => "checker",
            TextureKind::Stripes => "stripes",
        }
    }
}

impl fmt::Display for TextureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine-grid" => Ok(TextureKind::SineGrid),
            "checker" => Ok(TextureKind::Checker),
            "stripes" => Ok(TextureKind::Stripes),
            other => Err(Error::param(format!("unknown texture kind `{other}`"))),
        }
    }
}

/// Square single-channel periodic texture with uniform additive noise.
pub fn generate_texture(
    kind: TextureKind,
    size: usize,
    period: usize,
    noise: f64,
    seed: u64,
) -> Result<Image> {
    generate_texture_shifted(kind, size, period, noise, seed, (0, 0))
}

/// Same as [`generate_texture`] with the pattern translated by `shift = (rows, cols)`.
pub fn generate_texture_shifted(
    kind: TextureKind,
    size: usize,
    period: usize,
    noise: f64,
    seed: u64,
    shift: (usize, usize),
) -> Result<Image> {
    if size < 32 {
        return Err(Error::param(format!("texture size {size} < 32")));
    }
    if period < 2 || period > size / 2 {
        return Err(Error::param(format!(
            "period {period} outside [2, {}]",
            size / 2
        )));
    }
    if !(0.0..=0.2).contains(&noise) {
        return Err(Error::param(format!("noise amplitude {noise} outside [0, 0.2]")));
    }
    let mut rng = seed::rng(seed);
    let p = period as f64;
    let half = (period / 2).max(1);
    let mut data = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (r, c) = (i + shift.0, j + shift.1);
            let base = match kind {
                TextureKind::SineGrid => {
                    0.5 + 0.25 * ((2.0 * PI * r as f64 / p).sin() + (2.0 * PI * c as f64 / p).sin())
                }
                TextureKind::Checker => {
                    if ((r % period) / half + (c % period) / half) % 2 == 0 {
                        0.3
                    } else {
                        0.7
                    }
                }
                TextureKind::Stripes => 0.5 + 0.3 * (2.0 * PI * c as f64 / p).sin(),
            };
            let n = if noise > 0.0 {
                rng.gen_range(-noise..=noise)
            } else {
                0.0
            };
            data.push((base + n).clamp(0.0, 1.0));
        }
    }
    Image::new(size, size, 1, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectKind {
    Hole,
    Scratch,
    Blob,
}

impl DefectKind {
    pub const ALL: [DefectKind; 3] = [DefectKind::Hole, DefectKind::Scratch, DefectKind::Blob];

    pub fn name(self) -> &'static str {
        match self {
            DefectKind::Hole => "hole",
            DefectKind::Scratch => "scratch",
            DefectKind::Blob => "blob",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DefectGeometry {
    /// Filled rectangle (holes) or the bounding box of a filled ellipse (blobs).
    Rect(Rect),
    /// Thick line segment between two pixel centres, `(x, y)` order.
    Segment {
        from: (f64, f64),
        to: (f64, f64),
        thickness: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectSpec {
    pub kind: DefectKind,
    pub geometry: DefectGeometry,
    pub delta: f64,
}

impl DefectSpec {
    fn validate(&self, img: &Image) -> Result<()> {
        match (self.kind, &self.geometry) {
            (DefectKind::Scratch, DefectGeometry::Segment { from, to, thickness }) => {
                let inside = |(x, y): (f64, f64)| {
                    x >= 0.0 && y >= 0.0 && x <= (img.width() - 1) as f64 && y <= (img.height() - 1) as f64
                };
                if !inside(*from) || !inside(*to) {
                    return Err(Error::param("scratch endpoint outside image"));
                }
                if !(*thickness >= 1.0) {
                    return Err(Error::param("scratch thickness must be >= 1"));
                }
            }
            (DefectKind::Hole | DefectKind::Blob, DefectGeometry::Rect(r)) => {
                if !img.contains(r) {
                    return Err(Error::param(format!("defect rect {r:?} outside image")));
                }
            }
            (kind, _) => {
                return Err(Error::param(format!(
                    "geometry does not match defect kind {}",
                    kind.name()
                )))
            }
        }
        if !self.delta.is_finite() {
            return Err(Error::param("defect delta must be finite"));
        }
        Ok(())
    }

    fn covers(&self, row: usize, col: usize) -> bool {
        match (&self.kind, &self.geometry) {
            (DefectKind::Hole, DefectGeometry::Rect(r)) => r.contains_point(row, col),
            (DefectKind::Blob, DefectGeometry::Rect(r)) => {
                let cx = r.x0 as f64 + (r.w as f64 - 1.0) / 2.0;
                let cy = r.y0 as f64 + (r.h as f64 - 1.0) / 2.0;
                let rx = r.w as f64 / 2.0;
                let ry = r.h as f64 / 2.0;
                let dx = (col as f64 - cx) / rx;
                let dy = (row as f64 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
            (_, DefectGeometry::Segment { from, to, thickness }) => {
                segment_distance((col as f64, row as f64), *from, *to) <= thickness / 2.0
            }
            _ => false,
        }
    }

    /// Pixel bounding box the defect can touch, clipped to the image.
    fn bounds(&self, img: &Image) -> Rect {
        match &self.geometry {
            DefectGeometry::Rect(r) => *r,
            DefectGeometry::Segment { from, to, thickness } => {
                let pad = thickness / 2.0;
                let x0 = (from.0.min(to.0) - pad).floor().max(0.0) as usize;
                let y0 = (from.1.min(to.1) - pad).floor().max(0.0) as usize;
                let x1 = ((from.0.max(to.0) + pad).ceil() as usize).min(img.width() - 1);
                let y1 = ((from.1.max(to.1) + pad).ceil() as usize).min(img.height() - 1);
                Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
            }
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * vx, a.1 + t * vy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Applies a synthetic defect. Holes shift every covered pixel by exactly
/// `delta`; scratches and blobs scale `delta` per pixel by a seeded factor in
/// `[0.8, 1]`. Results are clamped to `[0, 1]`.
pub fn inject_defect(img: &Image, spec: &DefectSpec, seed: u64) -> Result<(Image, Mask)> {
    spec.validate(img)?;
    let mut rng = seed::rng(seed);
    let mut out = img.clone();
    let mut mask = Mask::empty(img.height(), img.width());
    let b = spec.bounds(img);
    for row in b.y0..b.y0 + b.h {
        for col in b.x0..b.x0 + b.w {
            if !spec.covers(row, col) {
                continue;
            }
            mask.set(row, col);
            let delta = match spec.kind {
                DefectKind::Hole => spec.delta,
                _ => spec.delta * rng.gen_range(0.8..=1.0),
            };
            if delta != 0.0 {
                for ch in 0..img.channels() {
                    out.set(row, col, ch, img.get(row, col, ch) + delta);
                }
            }
        }
    }
    Ok((out, mask))
}

/// Draws a random defect of the given kind sized for an `height × width` image.
pub fn random_defect<R: Rng>(kind: DefectKind, height: usize, width: usize, rng: &mut R) -> DefectSpec {
    let scale = height.min(width) as f64 / 64.0;
    let sz = |lo: f64, hi: f64, rng: &mut R| ((rng.gen_range(lo..=hi) * scale).round() as usize).max(2);
    match kind {
        DefectKind::Hole => {
            let w = sz(4.0, 8.0, rng);
            let h = sz(4.0, 8.0, rng);
            let x0 = rng.gen_range(0..=width - w);
            let y0 = rng.gen_range(0..=height - h);
            DefectSpec {
                kind,
                geometry: DefectGeometry::Rect(Rect::new(x0, y0, w, h)),
                delta: -1.0,
            }
        }
        DefectKind::Scratch => {
            let len = rng.gen_range(12.0..=24.0) * scale;
            let angle = rng.gen_range(0.0..PI);
            let (dx, dy) = (len * angle.cos(), len * angle.sin());
            let margin = 2.0;
            let xs = (margin + dx.min(0.0).abs())..=(width as f64 - 1.0 - margin - dx.max(0.0));
            let ys = (margin + dy.min(0.0).abs())..=(height as f64 - 1.0 - margin - dy.max(0.0));
            let x = rng.gen_range(xs);
            let y = rng.gen_range(ys);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            DefectSpec {
                kind,
                geometry: DefectGeometry::Segment {
                    from: (x, y),
                    to: (x + dx, y + dy),
                    thickness: rng.gen_range(1.5..=2.5) * scale.max(1.0),
                },
                delta: sign * rng.gen_range(0.35..=0.5),
            }
        }
        DefectKind::Blob => {
            let w = sz(6.0, 12.0, rng);
            let h = sz(6.0, 12.0, rng);
            let x0 = rng.gen_range(0..=width - w);
            let y0 = rng.gen_range(0..=height - h);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            DefectSpec {
                kind,
                geometry: DefectGeometry::Rect(Rect::new(x0, y0, w, h)),
                delta: sign * rng.gen_range(0.3..=0.45),
            }
        }
    }
}
