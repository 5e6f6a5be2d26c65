//! 8×8 block partitioning, orthonormal forward/inverse DCT-II, and
//! quantization against a JPEG-style table. The transform substrate for the
//! parity embedding in [`crate::stego`]; no entropy coding, no JPEG files.

// indexed loops mirror the Σ formulas in the comments; iterator chains would
// obscure the math
#![allow(clippy::needless_range_loop)]

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const BLOCK: usize = 8;

/// 8×8 spatial block, `0[y][x]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelBlock(pub [[u8; BLOCK]; BLOCK]);

/// 8×8 DCT coefficients, `0[v][u]`; `(0,0)` is DC.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DctBlock(pub [[f64; BLOCK]; BLOCK]);

/// 8×8 quantized integer coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantizedBlock(pub [[i32; BLOCK]; BLOCK]);

/// 8×8 quantization divisors, all ≥ 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantTable([[u16; BLOCK]; BLOCK]);

/// ISO/IEC 10918-1 Annex K luminance table.
const ANNEX_K_LUMA: [[u16; BLOCK]; BLOCK] = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
];

impl QuantTable {
    /// Builds a table, rejecting any zero entry.
    pub fn new(entries: [[u16; BLOCK]; BLOCK]) -> Result<Self> {
        if entries.iter().flatten().any(|&e| e == 0) {
            return Err(Error::BadQuantTable);
        }
        Ok(Self(entries))
    }

    /// The standard JPEG luminance table (entry (0,0) = 16).
    pub fn annex_k() -> Self {
        Self(ANNEX_K_LUMA)
    }

    /// Parses 64 whitespace-separated integers in row-major order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = [[0u16; BLOCK]; BLOCK];
        let mut n = 0;
        for tok in text.split_ascii_whitespace() {
            if n >= 64 {
                return Err(Error::BadQuantTable);
            }
            let v: u16 = tok.parse().map_err(|_| Error::BadQuantTable)?;
            entries[n / BLOCK][n % BLOCK] = v;
            n += 1;
        }
        if n != 64 {
            return Err(Error::BadQuantTable);
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[[u16; BLOCK]; BLOCK] {
        &self.0
    }

    /// Row-major serialization, the inverse of [`QuantTable::parse`].
    pub fn to_text(&self) -> String {
        self.0
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl Default for QuantTable {
    fn default() -> Self {
        Self::annex_k()
    }
}

/// An image cut into raster-ordered 8×8 blocks, padded by edge replication.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    pub blocks: Vec<PixelBlock>,
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub width: u32,
    pub height: u32,
}

impl BlockGrid {
    /// Blocks in the grid; each carries one payload bit when embedding.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Cuts `img` into 8×8 blocks, replicating the last row/column into any
/// padding needed to reach multiples of 8.
pub fn partition(img: &GrayImage) -> BlockGrid {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let blocks_x = w.div_ceil(BLOCK);
    let blocks_y = h.div_ceil(BLOCK);
    let mut blocks = Vec::with_capacity(blocks_x * blocks_y);
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let mut b = [[0u8; BLOCK]; BLOCK];
            for (dy, row) in b.iter_mut().enumerate() {
                let sy = (by * BLOCK + dy).min(h - 1);
                for (dx, px) in row.iter_mut().enumerate() {
                    let sx = (bx * BLOCK + dx).min(w - 1);
                    *px = img.pixels()[sy * w + sx];
                }
            }
            blocks.push(PixelBlock(b));
        }
    }
    BlockGrid {
        blocks,
        blocks_x,
        blocks_y,
        width: img.width(),
        height: img.height(),
    }
}

/// Stitches a grid back into an image, cropping the replication padding.
/// `reassemble(partition(img)) == img`.
pub fn reassemble(grid: &BlockGrid) -> Result<GrayImage> {
    let (w, h) = (grid.width as usize, grid.height as usize);
    if grid.blocks.len() != grid.blocks_x * grid.blocks_y {
        return Err(Error::BadGeometry(format!(
            "{} blocks for a {}x{} grid",
            grid.blocks.len(),
            grid.blocks_x,
            grid.blocks_y
        )));
    }
    if w.div_ceil(BLOCK) != grid.blocks_x || h.div_ceil(BLOCK) != grid.blocks_y {
        return Err(Error::BadGeometry(format!(
            "{}x{} image does not fit a {}x{} grid",
            w, h, grid.blocks_x, grid.blocks_y
        )));
    }
    let mut pixels = vec![0u8; w * h];
    for (i, block) in grid.blocks.iter().enumerate() {
        let (bx, by) = (i % grid.blocks_x, i / grid.blocks_x);
        for (dy, row) in block.0.iter().enumerate() {
            let y = by * BLOCK + dy;
            if y >= h {
                break;
            }
            for (dx, &px) in row.iter().enumerate() {
                let x = bx * BLOCK + dx;
                if x < w {
                    pixels[y * w + x] = px;
                }
            }
        }
    }
    GrayImage::new(grid.width, grid.height, pixels)
}

/// Cosine basis `T[u][x] = α(u)·cos((2x+1)uπ/16)` with `α(0) = √(1/8)`,
/// `α(u>0) = 1/2`, so the 2-D transform is orthonormal.
fn basis() -> &'static [[f64; BLOCK]; BLOCK] {
    static BASIS: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut t = [[0.0; BLOCK]; BLOCK];
        for (u, row) in t.iter_mut().enumerate() {
            let alpha = if u == 0 {
                (1.0 / BLOCK as f64).sqrt()
            } else {
                0.5
            };
            for (x, e) in row.iter_mut().enumerate() {
                *e = alpha * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        t
    })
}

/// Level-shifts by −128 and applies the orthonormal 2-D DCT-II.
pub fn forward_dct(b: &PixelBlock) -> DctBlock {
    let t = basis();
    // rows first: tmp[y][u] = Σ_x (b[y][x] − 128)·T[u][x]
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            let mut acc = 0.0;
            for x in 0..BLOCK {
                acc += (b.0[y][x] as f64 - 128.0) * t[u][x];
            }
            tmp[y][u] = acc;
        }
    }
    // then columns: c[v][u] = Σ_y T[v][y]·tmp[y][u]
    let mut c = [[0.0; BLOCK]; BLOCK];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            let mut acc = 0.0;
            for y in 0..BLOCK {
                acc += t[v][y] * tmp[y][u];
            }
            c[v][u] = acc;
        }
    }
    DctBlock(c)
}

fn round_half_away(v: f64) -> f64 {
    v.round() // f64::round is half-away-from-zero
}

/// Inverse orthonormal DCT-II, +128 level shift, round half away from zero,
/// clamp to [0,255].
pub fn inverse_dct(c: &DctBlock) -> PixelBlock {
    let t = basis();
    // tmp[y][u] = Σ_v T[v][y]·c[v][u]
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            let mut acc = 0.0;
            for v in 0..BLOCK {
                acc += t[v][y] * c.0[v][u];
            }
            tmp[y][u] = acc;
        }
    }
    let mut b = [[0u8; BLOCK]; BLOCK];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            let mut acc = 0.0;
            for u in 0..BLOCK {
                acc += tmp[y][u] * t[u][x];
            }
            b[y][x] = round_half_away(acc + 128.0).clamp(0.0, 255.0) as u8;
        }
    }
    PixelBlock(b)
}

/// Entrywise `round(c/t)`, half away from zero.
pub fn quantize(c: &DctBlock, t: &QuantTable) -> QuantizedBlock {
    let mut q = [[0i32; BLOCK]; BLOCK];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            q[v][u] = round_half_away(c.0[v][u] / t.0[v][u] as f64) as i32;
        }
    }
    QuantizedBlock(q)
}

/// Entrywise `q × t`.
pub fn dequantize(q: &QuantizedBlock, t: &QuantTable) -> DctBlock {
    let mut c = [[0.0; BLOCK]; BLOCK];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            c[v][u] = q.0[v][u] as f64 * t.0[v][u] as f64;
        }
    }
    DctBlock(c)
}
