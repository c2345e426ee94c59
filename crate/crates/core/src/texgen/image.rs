use crate::error::{Error, Result};

/// Row-major `height × width × channels` intensity grid with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::param(format!("channels must be 1 or 3, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::param("image dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::param(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    /// Writes a value, clamping it into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = value.clamp(0.0, 1.0);
    }

    pub fn full_rect(&self) -> Rect {
        Rect {
            x0: 0,
            y0: 0,
            w: self.width,
            h: self.height,
        }
    }

    pub fn contains(&self, r: &Rect) -> bool {
        r.w >= 1 && r.h >= 1 && r.x0 + r.w <= self.width && r.y0 + r.h <= self.height
    }

    pub fn crop(&self, r: &Rect) -> Result<Image> {
        if !self.contains(r) {
            return Err(Error::param(format!(
                "rect {r:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(r.w * r.h * self.channels);
        for row in r.y0..r.y0 + r.h {
            let start = self.index(row, r.x0, 0);
            data.extend_from_slice(&self.data[start..start + r.w * self.channels]);
        }
        Ok(Image {
            height: r.h,
            width: r.w,
            channels: self.channels,
            data,
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Axis-aligned pixel rectangle: columns `x0..x0+w`, rows `y0..y0+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains_point(&self, row: usize, col: usize) -> bool {
        row >= self.y0 && row < self.y0 + self.h && col >= self.x0 && col < self.x0 + self.w
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 < other.x0 + other.w
            && other.x0 < self.x0 + self.w
            && self.y0 < other.y0 + other.h
            && other.y0 < self.y0 + self.h
    }
}

/// Binary pixel mask with the same height/width as the image it annotates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize) {
        self.bits[row * self.width + col] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Number of marked pixels inside `r`.
    pub fn count_in(&self, r: &Rect) -> usize {
        let mut n = 0;
        for row in r.y0..(r.y0 + r.h).min(self.height) {
            for col in r.x0..(r.x0 + r.w).min(self.width) {
                n += usize::from(self.get(row, col));
            }
        }
        n
    }

    pub fn to_image(&self) -> Image {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn from_image(img: &Image) -> Self {
        let mut m = Mask::empty(img.height(), img.width());
        for row in 0..img.height() {
            for col in 0..img.width() {
                if (0..img.channels()).any(|c| img.get(row, col, c) >= 0.5) {
                    m.set(row, col);
                }
            }
        }
        m
    }
}
