//! Netpbm input and output. Reads P2/P5 grayscale and P3/P6 color (color is
//! converted to luma), writes binary P5 with maxval 255.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// BT.601 luma weights used for color conversion.
const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

struct Scanner<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::PnmParse {
            offset: self.pos,
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    /// Skips whitespace and `#` comments (which run to end of line).
    fn skip_space(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(c) = self.peek() {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    /// Reads a whitespace-delimited unsigned decimal token.
    fn uint(&mut self, what: &str) -> Result<u64> {
        self.skip_space();
        let start = self.pos;
        while self.peek().map(|b| b.is_ascii_digit()).unwrap_or(false) {
            self.pos += 1;
        }
        if self.pos == start {
            return self.err(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.data[start..self.pos]).unwrap();
        match text.parse::<u64>() {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.err(format!("{what} out of range"))
            }
        }
    }

    /// Consumes the single whitespace byte that conventionally separates the
    /// header from a binary raster. Absence is tolerated so headers packed
    /// tight against the raster still parse.
    fn raster_separator(&mut self) {
        if self
            .peek()
            .map(|b| b.is_ascii_whitespace())
            .unwrap_or(false)
        {
            self.pos += 1;
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return self.err(format!("truncated raster: {what}"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn scale_to_255(v: u64, maxval: u64) -> f64 {
    v as f64 * 255.0 / maxval as f64
}

fn round_clamp(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn luma(r: f64, g: f64, b: f64) -> u8 {
    round_clamp(LUMA_R * r + LUMA_G * g + LUMA_B * b)
}

/// Decodes a Netpbm image (P2/P3/P5/P6). Color inputs are reduced to luma,
/// and samples are rescaled so the output maxval is 255.
pub fn read_pnm(bytes: &[u8]) -> Result<GrayImage> {
    let mut sc = Scanner::new(bytes);
    if bytes.len() < 2 {
        return sc.err("missing magic");
    }
    let magic = &bytes[..2];
    sc.pos = 2;
    let (color, ascii) = match magic {
        b"P2" => (false, true),
        b"P3" => (true, true),
        b"P5" => (false, false),
        b"P6" => (true, false),
        _ => return sc.err("unsupported magic (want P2/P3/P5/P6)"),
    };

    let width = sc.uint("width")?;
    let height = sc.uint("height")?;
    if width == 0 || height == 0 || width > u32::MAX as u64 || height > u32::MAX as u64 {
        return sc.err(format!("bad dimensions {width}x{height}"));
    }
    let maxval = sc.uint("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return sc.err(format!("maxval {maxval} out of range 1..=65535"));
    }

    let npixels = (width as usize)
        .checked_mul(height as usize)
        .ok_or(Error::PnmParse {
            offset: sc.pos,
            msg: "dimension overflow".into(),
        })?;
    let channels = if color { 3 } else { 1 };

    let mut samples: Vec<u64> = Vec::with_capacity(npixels * channels);
    if ascii {
        for _ in 0..npixels * channels {
            let v = sc.uint("raster sample")?;
            if v > maxval {
                return sc.err(format!("sample {v} exceeds maxval {maxval}"));
            }
            samples.push(v);
        }
    } else {
        sc.raster_separator();
        let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
        let raw = sc.take(npixels * channels * bytes_per_sample, "pixel data")?;
        if bytes_per_sample == 1 {
            samples.extend(raw.iter().map(|&b| b as u64));
        } else {
            samples.extend(
                raw.chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as u64),
            );
        }
    }

    let mut pixels = Vec::with_capacity(npixels);
    if color {
        for rgb in samples.chunks_exact(3) {
            let r = scale_to_255(rgb[0], maxval);
            let g = scale_to_255(rgb[1], maxval);
            let b = scale_to_255(rgb[2], maxval);
            pixels.push(luma(r, g, b));
        }
    } else if maxval == 255 {
        pixels.extend(samples.iter().map(|&v| v as u8));
    } else {
        pixels.extend(
            samples
                .iter()
                .map(|&v| round_clamp(scale_to_255(v, maxval))),
        );
    }

    GrayImage::new(width as u32, height as u32, pixels)
}

/// Encodes a binary P5 with maxval 255. `read_pnm(write_pgm(img)) == img`.
pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.pixels());
    out
}

/// Reads a PNM file from disk.
pub fn load_pnm(path: &std::path::Path) -> Result<GrayImage> {
    read_pnm(&std::fs::read(path)?)
}

/// Writes an image to disk as binary P5.
pub fn save_pgm(img: &GrayImage, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, write_pgm(img))?;
    Ok(())
}
