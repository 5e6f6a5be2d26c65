//! 8-bit grayscale raster and the basic transforms the rest of the crate
//! builds on: quarter-turn rotation and intensity histograms.

use crate::error::{Error, Result};

/// A width x height 8-bit grayscale image, pixels stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    /// Builds an image from raw row-major pixels. The pixel count must match
    /// `width * height` and both dimensions must be at least 1.
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::BadGeometry(format!(
                "zero image dimension {width}x{height}"
            )));
        }
        let expected = (width as usize)
            .checked_mul(height as usize)
            .ok_or_else(|| Error::BadGeometry("dimension overflow".into()))?;
        if pixels.len() != expected {
            return Err(Error::BadGeometry(format!(
                "{} pixels for a {width}x{height} image (expected {expected})",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Lossless counterclockwise rotation by `quarter_turns * 90` degrees.
    /// Turns are taken modulo 4; odd turns swap the dimensions.
    pub fn rotate_quarter(&self, quarter_turns: u32) -> GrayImage {
        let mut out = self.clone();
        for _ in 0..(quarter_turns % 4) {
            out = out.rotate_ccw_once();
        }
        out
    }

    fn rotate_ccw_once(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        // dst(x, y) = src(w - 1 - y, x); dimensions swap.
        GrayImage::from_fn(h, w, |x, y| self.get(w - 1 - y, x))
    }

    /// 256-bin intensity histogram; counts sum to `width * height`.
    pub fn histogram(&self) -> [u64; 256] {
        let mut bins = [0u64; 256];
        for &p in &self.pixels {
            bins[p as usize] += 1;
        }
        bins
    }
}
