//! Gabor filter bank texture features: a self-similar family of complex
//! kernels over M scales × N orientations, per-response magnitude maps and
//! energies, the interleaved (μ, σ) feature vector, and circular-shift
//! rotation normalization.

use std::sync::Mutex;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Filter bank geometry. The frequency band [freq_low, freq_high] is covered
/// by `scales` octave-like steps; `orientations` angles span a half turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub scales: usize,
    pub orientations: usize,
    pub freq_low: f64,
    pub freq_high: f64,
    pub kernel_radius: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            scales: 5,
            orientations: 6,
            freq_low: 0.05,
            freq_high: 0.4,
            kernel_radius: 15,
        }
    }
}

impl BankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales < 2 {
            return Err(Error::BadBankConfig(format!(
                "scales must be >= 2, got {}",
                self.scales
            )));
        }
        if self.orientations < 2 {
            return Err(Error::BadBankConfig(format!(
                "orientations must be >= 2, got {}",
                self.orientations
            )));
        }
        if !(self.freq_low > 0.0 && self.freq_low < self.freq_high && self.freq_high < 0.5) {
            return Err(Error::BadBankConfig(format!(
                "need 0 < freq_low < freq_high < 0.5, got {} and {}",
                self.freq_low, self.freq_high
            )));
        }
        if self.kernel_radius == 0 {
            return Err(Error::BadBankConfig("kernel_radius must be >= 1".into()));
        }
        Ok(())
    }

    /// Scale step `a = (freq_high/freq_low)^(1/(scales−1))`.
    pub fn scale_factor(&self) -> f64 {
        (self.freq_high / self.freq_low).powf(1.0 / (self.scales - 1) as f64)
    }

    /// Feature dimensionality `2·M·N`.
    pub fn feature_len(&self) -> usize {
        2 * self.scales * self.orientations
    }

    /// Minimum image side for feature extraction: the kernel support.
    pub fn min_image_side(&self) -> u32 {
        (2 * self.kernel_radius + 1) as u32
    }
}

/// One complex kernel of the bank on a (2r+1)² grid, row-major, DC-free.
#[derive(Clone, Debug)]
pub struct GaborKernel {
    taps: Vec<Complex<f64>>,
    radius: usize,
    scale: usize,
    orientation: usize,
    center_frequency: f64,
    angle: f64,
}

impl GaborKernel {
    pub fn taps(&self) -> &[Complex<f64>] {
        &self.taps
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn orientation(&self) -> usize {
        self.orientation
    }

    /// Radial center frequency in cycles/pixel.
    pub fn center_frequency(&self) -> f64 {
        self.center_frequency
    }

    /// Orientation angle in radians.
    pub fn angle(&self) -> f64 {
        self.angle
    }
}

/// Per-pixel complex modulus of one (m, n) response; image-sized.
#[derive(Clone, Debug)]
pub struct ResponseMagnitude {
    pub width: u32,
    pub height: u32,
    pub scale: usize,
    pub orientation: usize,
    pub values: Vec<f64>,
}

/// E(m,n) = Σ_x Σ_y |G_mn(x,y)| for every bank cell, row-major by scale.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyMap {
    pub scales: usize,
    pub orientations: usize,
    pub values: Vec<f64>,
}

impl EnergyMap {
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.values[m * self.orientations + n]
    }

    /// Total energy per orientation, summed over scales.
    pub fn orientation_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.orientations];
        for m in 0..self.scales {
            for (n, t) in totals.iter_mut().enumerate() {
                *t += self.get(m, n);
            }
        }
        totals
    }

    /// argmax_n Σ_m E(m,n); ties resolve to the lowest index.
    pub fn dominant_orientation(&self) -> usize {
        let totals = self.orientation_totals();
        let mut best = 0;
        for (n, &t) in totals.iter().enumerate() {
            if t > totals[best] {
                best = n;
            }
        }
        best
    }
}

/// Texture signature: (μ, σ) per bank cell, orientation varying fastest,
/// plus the dominant orientation index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub scales: usize,
    pub orientations: usize,
    /// Interleaved (μ00, σ00, μ01, σ01, …); length 2·scales·orientations.
    pub values: Vec<f64>,
    pub dominant_orientation: usize,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mu(&self, m: usize, n: usize) -> f64 {
        self.values[2 * (m * self.orientations + n)]
    }

    pub fn sigma(&self, m: usize, n: usize) -> f64 {
        self.values[2 * (m * self.orientations + n) + 1]
    }

    /// Narrows every component through f32, the precision used by the
    /// embedded payload and the on-disk index. Idempotent.
    pub fn quantize_f32(&self) -> Self {
        Self {
            scales: self.scales,
            orientations: self.orientations,
            values: self.values.iter().map(|&v| v as f32 as f64).collect(),
            dominant_orientation: self.dominant_orientation,
        }
    }
}

/// Builds the M×N kernel family. Scale m has center frequency
/// `freq_high·a^(m−(M−1))` (so the top scale sits at freq_high), orientation
/// n the angle nπ/N; envelope widths come from half-peak frequency coverage.
pub fn build_bank(cfg: &BankConfig) -> Result<Vec<GaborKernel>> {
    cfg.validate()?;
    let (m_scales, n_orients) = (cfg.scales, cfg.orientations);
    let a = cfg.scale_factor();
    let uh = cfg.freq_high;
    let ln2_2 = 2.0 * std::f64::consts::LN_2;

    // Half-peak coverage in the frequency plane (radial and angular).
    let sigma_u = ((a - 1.0) * uh) / ((a + 1.0) * ln2_2.sqrt());
    let sigma_v = (std::f64::consts::PI / (2.0 * n_orients as f64)).tan()
        * (uh - 2.0 * std::f64::consts::LN_2 * sigma_u * sigma_u / uh)
        / (ln2_2 - ln2_2 * ln2_2 * sigma_u * sigma_u / (uh * uh)).sqrt();
    let sigma_x = 1.0 / (2.0 * std::f64::consts::PI * sigma_u);
    let sigma_y = 1.0 / (2.0 * std::f64::consts::PI * sigma_v);

    let r = cfg.kernel_radius as isize;
    let side = cfg.min_image_side() as usize;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma_x * sigma_y);

    let mut bank = Vec::with_capacity(m_scales * n_orients);
    for m in 0..m_scales {
        // dilation: m = M−1 is the mother kernel, lower m shrink in frequency
        let scale_f = a.powi(-((m_scales - 1 - m) as i32));
        for n in 0..n_orients {
            let theta = n as f64 * std::f64::consts::PI / n_orients as f64;
            let (cos_t, sin_t) = (theta.cos(), theta.sin());
            let mut taps = Vec::with_capacity(side * side);
            for y in -r..=r {
                for x in -r..=r {
                    let xr = scale_f * (x as f64 * cos_t + y as f64 * sin_t);
                    let yr = scale_f * (-(x as f64) * sin_t + y as f64 * cos_t);
                    let env = scale_f
                        * norm
                        * (-0.5 * (xr * xr / (sigma_x * sigma_x) + yr * yr / (sigma_y * sigma_y)))
                            .exp();
                    let phase = 2.0 * std::f64::consts::PI * uh * xr;
                    taps.push(Complex::new(env * phase.cos(), env * phase.sin()));
                }
            }
            // Remove DC gain so responses ignore constant illumination. The
            // imaginary mean is ~0 by odd symmetry already; subtracting it
            // makes the invariance exact.
            let count = taps.len() as f64;
            let mean_re: f64 = taps.iter().map(|t| t.re).sum::<f64>() / count;
            let mean_im: f64 = taps.iter().map(|t| t.im).sum::<f64>() / count;
            for t in &mut taps {
                t.re -= mean_re;
                t.im -= mean_im;
            }
            bank.push(GaborKernel {
                taps,
                radius: cfg.kernel_radius,
                scale: m,
                orientation: n,
                center_frequency: uh * scale_f,
                angle: theta,
            });
        }
    }
    Ok(bank)
}

/// Edge-inclusive mirror index: …3 2 1 0 | 0 1 2 3 … n−1 | n−1 … (iterated
/// until in range, so kernels wider than the image still resolve).
fn reflect(mut i: isize, n: isize) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Smallest 5-smooth integer ≥ n (rustfft is fastest on such sizes).
fn next_smooth(mut n: usize) -> usize {
    loop {
        let mut m = n.max(1);
        for f in [2, 3, 5] {
            while m.is_multiple_of(f) {
                m /= f;
            }
        }
        if m == 1 {
            return n.max(1);
        }
        n += 1;
    }
}

struct Fft2 {
    fw: usize,
    fh: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(fw: usize, fh: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fw,
            fh,
            row_fwd: planner.plan_fft_forward(fw),
            col_fwd: planner.plan_fft_forward(fh),
            row_inv: planner.plan_fft_inverse(fw),
            col_inv: planner.plan_fft_inverse(fh),
        }
    }

    fn run(&self, buf: &mut [Complex<f64>], scratch: &mut [Complex<f64>], forward: bool) {
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        row.process(buf);
        for y in 0..self.fh {
            for x in 0..self.fw {
                scratch[x * self.fh + y] = buf[y * self.fw + x];
            }
        }
        col.process(scratch);
        for x in 0..self.fw {
            for y in 0..self.fh {
                buf[y * self.fw + x] = scratch[x * self.fh + y];
            }
        }
    }
}

/// FFT-size plans plus the bank's kernel spectra for one image size.
struct SizePlans {
    width: u32,
    height: u32,
    fw: usize,
    fh: usize,
    fft: Fft2,
    kernel_spectra: Vec<Vec<Complex<f64>>>,
}

fn padded_image(img: &GrayImage, r: usize) -> Vec<f64> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let (pw, ph) = (w as usize + 2 * r, h as usize + 2 * r);
    let mut out = vec![0.0; pw * ph];
    for py in 0..ph {
        let sy = reflect(py as isize - r as isize, h);
        for px in 0..pw {
            let sx = reflect(px as isize - r as isize, w);
            out[py * pw + px] = img.pixels()[sy * w as usize + sx] as f64;
        }
    }
    out
}

impl SizePlans {
    fn new(img_w: u32, img_h: u32, bank: &[GaborKernel], radius: usize) -> Self {
        let r = radius;
        let fw = next_smooth(img_w as usize + 4 * r);
        let fh = next_smooth(img_h as usize + 4 * r);
        let fft = Fft2::new(fw, fh);
        let side = 2 * r + 1;
        let mut scratch = vec![Complex::new(0.0, 0.0); fw * fh];
        let kernel_spectra = bank
            .iter()
            .map(|k| {
                let mut buf = vec![Complex::new(0.0, 0.0); fw * fh];
                for ky in 0..side {
                    for kx in 0..side {
                        buf[ky * fw + kx] = k.taps[ky * side + kx];
                    }
                }
                fft.run(&mut buf, &mut scratch, true);
                buf
            })
            .collect();
        Self {
            width: img_w,
            height: img_h,
            fw,
            fh,
            fft,
            kernel_spectra,
        }
    }

    /// Spectrum of the reflection-padded image, ready for pointwise products.
    fn image_spectrum(&self, img: &GrayImage, r: usize) -> Vec<Complex<f64>> {
        let padded = padded_image(img, r);
        let (pw, ph) = (img.width() as usize + 2 * r, img.height() as usize + 2 * r);
        let mut buf = vec![Complex::new(0.0, 0.0); self.fw * self.fh];
        for y in 0..ph {
            for x in 0..pw {
                buf[y * self.fw + x] = Complex::new(padded[y * pw + x], 0.0);
            }
        }
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fw * self.fh];
        self.fft.run(&mut buf, &mut scratch, true);
        buf
    }

    /// Multiplies the cached kernel spectrum in, inverts, and reads out the
    /// centered magnitude: out(x,y) = |full(x+2r, y+2r)| / (fw·fh).
    fn magnitude(&self, img_spectrum: &[Complex<f64>], kernel_index: usize, r: usize) -> Vec<f64> {
        let spec = &self.kernel_spectra[kernel_index];
        let mut buf: Vec<Complex<f64>> = img_spectrum
            .iter()
            .zip(spec.iter())
            .map(|(a, b)| a * b)
            .collect();
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fw * self.fh];
        self.fft.run(&mut buf, &mut scratch, false);
        let inv_norm = 1.0 / (self.fw * self.fh) as f64;
        let (w, h) = (self.width as usize, self.height as usize);
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let c = buf[(y + 2 * r) * self.fw + (x + 2 * r)] * inv_norm;
                out[y * w + x] = c.norm();
            }
        }
        out
    }
}

/// Applies the whole bank to images, caching FFT plans and kernel spectra
/// for the most recent image size.
pub struct FeatureExtractor {
    cfg: BankConfig,
    bank: Vec<GaborKernel>,
    plans: Mutex<Option<Arc<SizePlans>>>,
}

impl FeatureExtractor {
    pub fn new(cfg: BankConfig) -> Result<Self> {
        let bank = build_bank(&cfg)?;
        Ok(Self {
            cfg,
            bank,
            plans: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &BankConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &[GaborKernel] {
        &self.bank
    }

    /// All M×N magnitude maps for `img`, bank order (orientation fastest).
    /// Thread-safe: the plan cache lock is held only to fetch or swap the
    /// per-size plans, never during the transforms themselves.
    pub fn responses(&self, img: &GrayImage) -> Vec<ResponseMagnitude> {
        let plans = {
            let mut guard = self.plans.lock().unwrap();
            let rebuild = match guard.as_ref() {
                Some(p) => p.width != img.width() || p.height != img.height(),
                None => true,
            };
            if rebuild {
                *guard = Some(Arc::new(SizePlans::new(
                    img.width(),
                    img.height(),
                    &self.bank,
                    self.cfg.kernel_radius,
                )));
            }
            Arc::clone(guard.as_ref().unwrap())
        };
        let spectrum = plans.image_spectrum(img, self.cfg.kernel_radius);
        self.bank
            .iter()
            .enumerate()
            .map(|(i, k)| ResponseMagnitude {
                width: img.width(),
                height: img.height(),
                scale: k.scale,
                orientation: k.orientation,
                values: plans.magnitude(&spectrum, i, self.cfg.kernel_radius),
            })
            .collect()
    }

    /// μ/σ texture signature of `img`; errors if the kernel support does not
    /// fit inside the image.
    pub fn features(&self, img: &GrayImage) -> Result<FeatureVector> {
        let min = self.cfg.min_image_side();
        if img.width() < min || img.height() < min {
            return Err(Error::ImageTooSmall {
                width: img.width(),
                height: img.height(),
                min,
            });
        }
        let mags = self.responses(img);
        let energies = energy_map(&mags)?;
        let pq = (img.width() as f64) * (img.height() as f64);
        let mut values = Vec::with_capacity(self.cfg.feature_len());
        for mag in &mags {
            let e = mag.values.iter().sum::<f64>();
            let mu = e / pq;
            let var = mag.values.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / pq;
            values.push(mu);
            values.push(var.sqrt());
        }
        Ok(FeatureVector {
            scales: self.cfg.scales,
            orientations: self.cfg.orientations,
            values,
            dominant_orientation: energies.dominant_orientation(),
        })
    }
}

/// Magnitude response of a single kernel (symmetric-reflection boundary,
/// output sized like the input). One-off path without plan caching.
pub fn filter_magnitude(img: &GrayImage, kernel: &GaborKernel) -> ResponseMagnitude {
    let r = kernel.radius;
    let fw = next_smooth(img.width() as usize + 4 * r);
    let fh = next_smooth(img.height() as usize + 4 * r);
    let fft = Fft2::new(fw, fh);
    let side = kernel.side();

    let mut scratch = vec![Complex::new(0.0, 0.0); fw * fh];
    let mut kbuf = vec![Complex::new(0.0, 0.0); fw * fh];
    for ky in 0..side {
        for kx in 0..side {
            kbuf[ky * fw + kx] = kernel.taps[ky * side + kx];
        }
    }
    fft.run(&mut kbuf, &mut scratch, true);

    let padded = padded_image(img, r);
    let (pw, ph) = (img.width() as usize + 2 * r, img.height() as usize + 2 * r);
    let mut ibuf = vec![Complex::new(0.0, 0.0); fw * fh];
    for y in 0..ph {
        for x in 0..pw {
            ibuf[y * fw + x] = Complex::new(padded[y * pw + x], 0.0);
        }
    }
    fft.run(&mut ibuf, &mut scratch, true);

    for (a, b) in ibuf.iter_mut().zip(kbuf.iter()) {
        *a *= b;
    }
    fft.run(&mut ibuf, &mut scratch, false);

    let inv_norm = 1.0 / (fw * fh) as f64;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut values = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            values[y * w + x] = (ibuf[(y + 2 * r) * fw + (x + 2 * r)] * inv_norm).norm();
        }
    }
    ResponseMagnitude {
        width: img.width(),
        height: img.height(),
        scale: kernel.scale,
        orientation: kernel.orientation,
        values,
    }
}

/// Sums each magnitude map into E(m,n). All maps must share dimensions.
pub fn energy_map(mags: &[ResponseMagnitude]) -> Result<EnergyMap> {
    let scales = mags.iter().map(|m| m.scale).max().map_or(0, |m| m + 1);
    let orientations = mags
        .iter()
        .map(|m| m.orientation)
        .max()
        .map_or(0, |n| n + 1);
    if mags.len() != scales * orientations {
        return Err(Error::DimMismatch(mags.len(), scales * orientations));
    }
    if let Some(first) = mags.first() {
        if mags
            .iter()
            .any(|m| m.width != first.width || m.height != first.height)
        {
            return Err(Error::DimensionMismatch(
                first.width,
                first.height,
                mags.iter()
                    .find(|m| m.width != first.width || m.height != first.height)
                    .unwrap()
                    .width,
                mags.iter()
                    .find(|m| m.width != first.width || m.height != first.height)
                    .unwrap()
                    .height,
            ));
        }
    }
    let mut values = vec![0.0; scales * orientations];
    for m in mags {
        values[m.scale * orientations + m.orientation] = m.values.iter().sum();
    }
    Ok(EnergyMap {
        scales,
        orientations,
        values,
    })
}

/// Convenience wrapper building a throwaway extractor.
pub fn feature_vector(img: &GrayImage, cfg: &BankConfig) -> Result<FeatureVector> {
    FeatureExtractor::new(cfg.clone())?.features(img)
}

/// Circularly shifts the (μ, σ) pairs within every scale row so the dominant
/// orientation's pair comes first. Idempotent; the result's dominant is 0.
pub fn normalize_rotation(f: &FeatureVector) -> FeatureVector {
    let (m_scales, n_orients) = (f.scales, f.orientations);
    let d = f.dominant_orientation;
    let mut values = vec![0.0; f.values.len()];
    for m in 0..m_scales {
        for n in 0..n_orients {
            let src = 2 * (m * n_orients + (n + d) % n_orients);
            let dst = 2 * (m * n_orients + n);
            values[dst] = f.values[src];
            values[dst + 1] = f.values[src + 1];
        }
    }
    FeatureVector {
        scales: m_scales,
        orientations: n_orients,
        values,
        dominant_orientation: 0,
    }
}
