//! Dense multi-channel images, integer rectangles and windowed patches.
//!
//! Samples are stored row-major with interleaved channels. Pixel `(x, y)`
//! sits at continuous coordinate `(x, y)`; there is no half-pixel offset.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image sample {v}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y) + c;
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.index(x, y);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn rect(&self) -> Rect {
        Rect::new(0, 0, self.width as i64, self.height as i64)
    }

    /// Copies channels `start..start + count` into a new image.
    pub fn select_channels(&self, start: usize, count: usize) -> Image {
        assert!(start + count <= self.channels);
        let mut out = Image::zeros(self.width, self.height, count);
        for (dst, src) in out
            .data
            .chunks_exact_mut(count)
            .zip(self.data.chunks_exact(self.channels))
        {
            dst.copy_from_slice(&src[start..start + count]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Root-mean-square difference over all samples.
    pub fn rms_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other));
        let n = self.data.len().max(1) as f64;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (sum / n).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copies the pixels of `rect` (clipped to this image) into a new image.
    pub fn crop(&self, rect: Rect) -> Image {
        let r = rect.intersect(&self.rect());
        let mut out = Image::zeros(r.width(), r.height(), self.channels);
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let src = self.pixel(x as usize, y as usize);
                out.pixel_mut((x - r.x0) as usize, (y - r.y0) as usize)
                    .copy_from_slice(src);
            }
        }
        out
    }
}

/// Half-open integer rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub const EMPTY: Rect = Rect {
        x0: 0,
        y0: 0,
        x1: 0,
        y1: 0,
    };

    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn from_size(x0: i64, y0: i64, width: usize, height: usize) -> Self {
        Self::new(x0, y0, x0 + width as i64, y0 + height as i64)
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn width(&self) -> usize {
        (self.x1 - self.x0).max(0) as usize
    }

    pub fn height(&self) -> usize {
        (self.y1 - self.y0).max(0) as usize
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.is_empty()
            || (other.x0 >= self.x0
                && other.x1 <= self.x1
                && other.y0 >= self.y0
                && other.y1 <= self.y1)
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        let r = Rect::new(
            self.x0.max(other.x0),
            self.y0.max(other.y0),
            self.x1.min(other.x1),
            self.y1.min(other.y1),
        );
        if r.is_empty() {
            Rect::EMPTY
        } else {
            r
        }
    }

    /// Smallest rectangle containing both.
    pub fn union(&self, other: &Rect) -> Rect {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        Rect::new(
            self.x0.min(other.x0),
            self.y0.min(other.y0),
            self.x1.max(other.x1),
            self.y1.max(other.y1),
        )
    }

    pub fn dilate(&self, r: i64) -> Rect {
        if self.is_empty() {
            return *self;
        }
        Rect::new(self.x0 - r, self.y0 - r, self.x1 + r, self.y1 + r)
    }

    /// Splits a `width x height` grid into tiles of at most `tile` pixels.
    pub fn tiles(width: usize, height: usize, tile: usize) -> Vec<Rect> {
        let tile = tile.max(1) as i64;
        let (w, h) = (width as i64, height as i64);
        let mut out = Vec::new();
        let mut y = 0;
        while y < h {
            let mut x = 0;
            while x < w {
                out.push(Rect::new(x, y, (x + tile).min(w), (y + tile).min(h)));
                x += tile;
            }
            y += tile;
        }
        out
    }
}

/// An image window placed at an integer offset inside a larger grid.
/// Reads outside the window return zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub rect: Rect,
    pub image: Image,
}

impl Patch {
    pub fn zeros(rect: Rect, channels: usize) -> Self {
        Self {
            rect,
            image: Image::zeros(rect.width(), rect.height(), channels),
        }
    }

    pub fn full(image: Image) -> Self {
        Self {
            rect: image.rect(),
            image,
        }
    }

    pub fn channels(&self) -> usize {
        self.image.channels()
    }

    #[inline]
    pub fn offset(&self, x: i64, y: i64) -> Option<usize> {
        if self.rect.contains(x, y) {
            Some(
                self.image
                    .index((x - self.rect.x0) as usize, (y - self.rect.y0) as usize),
            )
        } else {
            None
        }
    }

    #[inline]
    pub fn at(&self, x: i64, y: i64) -> Option<&[f64]> {
        let c = self.channels();
        self.offset(x, y).map(|i| &self.image.data()[i..i + c])
    }

    #[inline]
    pub fn at_mut(&mut self, x: i64, y: i64) -> Option<&mut [f64]> {
        let c = self.channels();
        self.offset(x, y).map(move |i| &mut self.image.data_mut()[i..i + c])
    }

    /// Copies `rect` out of this patch; pixels outside the patch are zero.
    pub fn crop(&self, rect: Rect) -> Patch {
        let mut out = Patch::zeros(rect, self.channels());
        let r = rect.intersect(&self.rect);
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let src = self.at(x, y).unwrap().to_vec();
                out.at_mut(x, y).unwrap().copy_from_slice(&src);
            }
        }
        out
    }

    /// Writes this patch into a full image, clipping to the image bounds.
    pub fn paste_into(&self, dst: &mut Image, only: Rect) {
        let r = self.rect.intersect(&only).intersect(&dst.rect());
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let src = self.at(x, y).unwrap();
                dst.pixel_mut(x as usize, y as usize).copy_from_slice(src);
            }
        }
    }

    pub fn bytes(&self) -> usize {
        self.image.data().len() * std::mem::size_of::<f64>()
    }
}
