use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{Image, Rect};
use crate::error::{Error, Result};
use crate::seed;

/// Sampling ranges for the pasted rectangle. `area` is a fraction of the
/// image area; `aspect` is width/height and is drawn log-uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutPasteParams {
    pub area: (f64, f64),
    pub aspect: (f64, f64),
}

impl Default for CutPasteParams {
    fn default() -> Self {
        Self {
            area: (0.02, 0.15),
            aspect: (0.3, 3.3),
        }
    }
}

impl CutPasteParams {
    pub fn validate(&self) -> Result<()> {
        let (alo, ahi) = self.area;
        let (rlo, rhi) = self.aspect;
        if !(alo > 0.0 && alo <= ahi && ahi <= 1.0) {
            return Err(Error::param(format!("invalid area ratio range ({alo}, {ahi})")));
        }
        if !(rlo > 0.0 && rlo <= rhi && rhi.is_finite()) {
            return Err(Error::param(format!("invalid aspect range ({rlo}, {rhi})")));
        }
        Ok(())
    }
}

const MAX_DRAWS: usize = 100;

/// Samples a source and destination rectangle of identical shape.
pub fn sample_rects<R: Rng>(
    height: usize,
    width: usize,
    params: &CutPasteParams,
    rng: &mut R,
) -> Result<(Rect, Rect)> {
    params.validate()?;
    let total = (height * width) as f64;
    if total * params.area.0 < 1.0 {
        return Err(Error::param(format!(
            "{width}x{height} image too small for minimum area ratio {}",
            params.area.0
        )));
    }
    let (llo, lhi) = (params.aspect.0.ln(), params.aspect.1.ln());
    for _ in 0..MAX_DRAWS {
        let area = total * sample(rng, params.area.0, params.area.1);
        let aspect = sample(rng, llo, lhi).exp();
        let w = (area * aspect).sqrt().round() as usize;
        let h = (area / aspect).sqrt().round() as usize;
        if w == 0 || h == 0 || w > width || h > height {
            continue;
        }
        let src = Rect::new(rng.gen_range(0..=width - w), rng.gen_range(0..=height - h), w, h);
        let dst = Rect::new(rng.gen_range(0..=width - w), rng.gen_range(0..=height - h), w, h);
        return Ok((src, dst));
    }
    Err(Error::param(format!(
        "no rectangle fits a {width}x{height} image after {MAX_DRAWS} draws"
    )))
}

fn sample<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Copies the pixels of `src` onto `dst` (same shape), reading from the
/// unmodified input so overlapping rectangles behave like a crop-then-paste.
pub fn paste(img: &Image, src: &Rect, dst: &Rect) -> Result<Image> {
    if src.w != dst.w || src.h != dst.h {
        return Err(Error::param("source and destination shapes differ"));
    }
    if !img.contains(src) || !img.contains(dst) {
        return Err(Error::param("cutpaste rectangle outside image"));
    }
    let mut out = img.clone();
    for dy in 0..src.h {
        for dx in 0..src.w {
            for ch in 0..img.channels() {
                let v = img.get(src.y0 + dy, src.x0 + dx, ch);
                out.set(dst.y0 + dy, dst.x0 + dx, ch, v);
            }
        }
    }
    Ok(out)
}

/// Crops a random rectangle and pastes it at a random location of the same image.
pub fn cutpaste(img: &Image, params: &CutPasteParams, seed: u64) -> Result<(Image, Rect, Rect)> {
    let mut rng = seed::rng(seed);
    cutpaste_with(img, params, &mut rng)
}

pub fn cutpaste_with<R: Rng>(
    img: &Image,
    params: &CutPasteParams,
    rng: &mut R,
) -> Result<(Image, Rect, Rect)> {
    let (src, dst) = sample_rects(img.height(), img.width(), params, rng)?;
    Ok((paste(img, &src, &dst)?, src, dst))
}
