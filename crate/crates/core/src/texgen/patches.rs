use super::image::{Image, Rect};
use crate::error::{Error, Result};

/// Grid geometry of a sliding-window extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
    pub stride: usize,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::param("stride must be >= 1"));
        }
        if patch == 0 || patch > height.min(width) {
            return Err(Error::param(format!(
                "patch {patch} does not fit a {width}x{height} image"
            )));
        }
        Ok(Self {
            rows: (height - patch) / stride + 1,
            cols: (width - patch) / stride + 1,
            patch,
            stride,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major patch rectangles.
    pub fn rects(&self) -> impl Iterator<Item = Rect> + '_ {
        (0..self.rows).flat_map(move |r| {
            (0..self.cols).map(move |c| Rect::new(c * self.stride, r * self.stride, self.patch, self.patch))
        })
    }
}

pub fn extract_patches(img: &Image, patch: usize, stride: usize) -> Result<Vec<(Rect, Image)>> {
    let grid = PatchGrid::new(img.height(), img.width(), patch, stride)?;
    grid.rects()
        .map(|r| img.crop(&r).map(|p| (r, p)))
        .collect()
}
