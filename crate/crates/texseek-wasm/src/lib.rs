//! Canvas-friendly bindings over the texseek core: compute a texture
//! signature, hide attributes in an image, and read them back — all on RGBA
//! pixel buffers as the browser hands them out.
//!
//! Structured results cross the boundary as JSON strings (the page calls
//! `JSON.parse`); pixel buffers cross as `Uint8Array`s. Each exported
//! function is a thin shim over a `_impl` twin that never touches `JsValue`,
//! so the logic stays testable on the host.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use texseek::config::Config;
use texseek::gabor::{energy_map, normalize_rotation, FeatureExtractor};
use texseek::image::GrayImage;
use texseek::retrieval::distance;
use texseek::stego::{
    capacity, embed_payload, encode_payload, extract_payload, psnr, reencode, StegoPayload,
};

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// ITU-R BT.601 luma with a single rounding, matching the file loader.
fn gray_from_rgba(rgba: &[u8], width: u32, height: u32) -> Result<GrayImage, String> {
    let expected = width as usize * height as usize * 4;
    if rgba.len() != expected {
        return Err(format!(
            "pixel buffer holds {} bytes, {width}x{height} RGBA needs {expected}",
            rgba.len()
        ));
    }
    Ok(GrayImage::from_fn(width, height, |x, y| {
        let i = (y as usize * width as usize + x as usize) * 4;
        let (r, g, b) = (rgba[i] as f64, rgba[i + 1] as f64, rgba[i + 2] as f64);
        (0.299 * r + 0.587 * g + 0.114 * b).round() as u8
    }))
}

/// Gray → opaque RGBA for `putImageData`.
#[wasm_bindgen]
pub fn gray_to_rgba(gray: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(gray.len() * 4);
    for &v in gray {
        out.extend_from_slice(&[v, v, v, 255]);
    }
    out
}

#[derive(Serialize)]
struct Analysis {
    scales: usize,
    orientations: usize,
    dominant_orientation: usize,
    /// Interleaved (mean, std-dev) per filter, rotation-normalized.
    features: Vec<f64>,
    /// Raw per-filter energies, scale-major, for the heat grid.
    energies: Vec<f64>,
    capacity_bits: usize,
}

fn analyze_impl(rgba: &[u8], width: u32, height: u32) -> Result<String, String> {
    let img = gray_from_rgba(rgba, width, height)?;
    let cfg = Config::default();
    let extractor = FeatureExtractor::new(cfg.bank.clone()).map_err(fail)?;
    let features = normalize_rotation(&extractor.features(&img).map_err(fail)?).quantize_f32();
    let energy = energy_map(&extractor.responses(&img)).map_err(fail)?;
    let mut energies = Vec::with_capacity(cfg.bank.scales * cfg.bank.orientations);
    for m in 0..cfg.bank.scales {
        for n in 0..cfg.bank.orientations {
            energies.push(energy.get(m, n));
        }
    }
    let out = Analysis {
        scales: cfg.bank.scales,
        orientations: cfg.bank.orientations,
        dominant_orientation: energy.dominant_orientation(),
        features: features.values.clone(),
        energies,
        capacity_bits: capacity(&img),
    };
    serde_json::to_string(&out).map_err(fail)
}

/// Texture signature of an RGBA buffer: rotation-normalized features, the
/// per-filter energy grid, and how many payload bits the image could carry.
#[wasm_bindgen]
pub fn analyze(rgba: &[u8], width: u32, height: u32) -> Result<String, JsValue> {
    js(analyze_impl(rgba, width, height))
}

#[derive(Serialize)]
struct EmbedResult {
    /// Stego image as grayscale bytes, row-major.
    gray: Vec<u8>,
    psnr_vs_original_db: f64,
    psnr_vs_reencode_db: f64,
    payload_bits: usize,
}

fn embed_attributes_impl(
    rgba: &[u8],
    width: u32,
    height: u32,
    attrs_json: &str,
) -> Result<String, String> {
    let attributes: Vec<(String, String)> = serde_json::from_str(attrs_json)
        .map_err(|e| format!("attributes must be a JSON array of pairs: {e}"))?;
    let img = gray_from_rgba(rgba, width, height)?;
    let cfg = Config::default();
    let extractor = FeatureExtractor::new(cfg.bank.clone()).map_err(fail)?;
    let payload = StegoPayload {
        features: normalize_rotation(&extractor.features(&img).map_err(fail)?).quantize_f32(),
        attributes,
    };
    let bits = encode_payload(&payload).map_err(fail)?.len();
    let stego = embed_payload(&img, &payload, &cfg.quant, cfg.parity_dc).map_err(fail)?;
    let baseline = reencode(&img, &cfg.quant).map_err(fail)?;
    let out = EmbedResult {
        psnr_vs_original_db: psnr(&stego, &img).map_err(fail)?,
        psnr_vs_reencode_db: psnr(&stego, &baseline).map_err(fail)?,
        payload_bits: bits,
        gray: stego.pixels().to_vec(),
    };
    serde_json::to_string(&out).map_err(fail)
}

/// Hides the image's own signature plus `attrs_json` (a JSON array of
/// `[key, value]` string pairs) inside the image. Returns the stego pixels
/// and the fidelity cost.
#[wasm_bindgen]
pub fn embed_attributes(
    rgba: &[u8],
    width: u32,
    height: u32,
    attrs_json: &str,
) -> Result<String, JsValue> {
    js(embed_attributes_impl(rgba, width, height, attrs_json))
}

#[derive(Serialize)]
struct ExtractResult {
    attributes: Vec<(String, String)>,
    dominant_orientation: usize,
    /// How far the hidden signature sits from one freshly computed off the
    /// stego pixels — small means the payload still matches its carrier.
    distance_to_recomputed: f64,
}

fn extract_attributes_impl(rgba: &[u8], width: u32, height: u32) -> Result<String, String> {
    let img = gray_from_rgba(rgba, width, height)?;
    let cfg = Config::default();
    let payload = extract_payload(&img, &cfg.quant, cfg.parity_dc)
        .map_err(|e| format!("no embedded attributes: {e}"))?;
    let extractor = FeatureExtractor::new(cfg.bank.clone()).map_err(fail)?;
    let recomputed = normalize_rotation(&extractor.features(&img).map_err(fail)?).quantize_f32();
    let out = ExtractResult {
        distance_to_recomputed: distance(&payload.features, &recomputed).map_err(fail)?,
        dominant_orientation: payload.features.dominant_orientation,
        attributes: payload.attributes,
    };
    serde_json::to_string(&out).map_err(fail)
}

/// Reads the hidden attributes back out of a stego image.
#[wasm_bindgen]
pub fn extract_attributes(rgba: &[u8], width: u32, height: u32) -> Result<String, JsValue> {
    js(extract_attributes_impl(rgba, width, height))
}

/// Deterministic sample texture so the page works without any image files:
/// a noisy grating, returned as grayscale bytes.
#[wasm_bindgen]
pub fn sample_texture(size: u32, freq: f64, theta_deg: f64, seed: u32) -> Vec<u8> {
    let theta = theta_deg.to_radians();
    let mut state = seed as u64 ^ 0x5DEECE66D;
    let mut unit = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    GrayImage::from_fn(size, size, |x, y| {
        let proj = x as f64 * theta.cos() + y as f64 * theta.sin();
        let wave = (2.0 * std::f64::consts::PI * freq * proj).cos();
        let noise = (unit() * 2.0 - 1.0) * 8.0;
        (128.0 + 80.0 * wave + noise).round().clamp(0.0, 255.0) as u8
    })
    .pixels()
    .to_vec()
}
