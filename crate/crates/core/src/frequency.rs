//! High-frequency indicators.
//!
//! * [`hf_diff`]: mean absolute difference between the Sobel gradient
//!   magnitudes of two consecutive decoded steps, measured at a common
//!   analysis resolution.
//! * [`hf_ratio`]: share of the shifted Fourier magnitude spectrum lying
//!   outside a centered disc of normalized radius `rho`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{resample, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HfParams {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for HfParams {
    fn default() -> Self {
        HfParams { rho: 0.25, epsilon: 1e-8 }
    }
}

impl HfParams {
    pub fn new(rho: f64, epsilon: f64) -> Result<Self> {
        let p = HfParams { rho, epsilon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Complex 2D spectrum, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Complex64>,
    /// DC sits at `(height / 2, width / 2)` when set, at `(0, 0)` otherwise.
    pub shifted: bool,
}

impl Spectrum {
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.data[v * self.width + u]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Per-pixel `sqrt(gx^2 + gy^2)` with replicated borders. Not clamped.
pub fn sobel_magnitude(img: &Image) -> Result<Image> {
    if img.width() < 3 || img.height() < 3 {
        return Err(Error::InvalidDimensions(format!(
            "Sobel needs at least 3x3, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Image::from_fn(img.width(), img.height(), |x, y| {
        let mut gx = 0.0;
        let mut gy = 0.0;
        for (ky, (row_x, row_y)) in SOBEL_X.iter().zip(SOBEL_Y.iter()).enumerate() {
            for kx in 0..3 {
                let v = img.get_clamped(x as isize + kx as isize - 1, y as isize + ky as isize - 1) as f64;
                gx += row_x[kx] * v;
                gy += row_y[kx] * v;
            }
        }
        (gx * gx + gy * gy).sqrt() as f32
    })
}

/// Mean absolute difference of Sobel responses after resampling both
/// inputs to `analysis_size x analysis_size`.
pub fn hf_diff(current: &Image, previous: &Image, analysis_size: usize) -> Result<f64> {
    if analysis_size < 3 {
        return Err(Error::InvalidDimensions(format!("analysis size {analysis_size} < 3")));
    }
    let a = sobel_magnitude(&resample(current, analysis_size, analysis_size)?)?;
    let b = sobel_magnitude(&resample(previous, analysis_size, analysis_size)?)?;
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| (p as f64 - q as f64).abs())
        .sum();
    Ok(total / a.data().len() as f64)
}

fn fft_in_place(buf: &mut [Complex64], twiddles: &[Complex64]) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let stride = n / len;
        for chunk in buf.chunks_exact_mut(len) {
            let (lo, hi) = chunk.split_at_mut(len / 2);
            for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                let t = *b * twiddles[k * stride];
                *b = *a - t;
                *a += t;
            }
        }
        len <<= 1;
    }
}

/// `exp(-2*pi*i*k/n)` for `k < n`.
fn twiddle_table(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / n as f64))
        .collect()
}

fn dft_direct(input: &[Complex64], twiddles: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    (0..n)
        .map(|k| {
            input
                .iter()
                .enumerate()
                .map(|(j, &x)| x * twiddles[(j * k) % n])
                .sum()
        })
        .collect()
}

/// One-dimensional forward transform; radix-2 for powers of two.
struct Transform1d {
    twiddles: Vec<Complex64>,
    radix2: bool,
}

impl Transform1d {
    fn new(n: usize) -> Self {
        Transform1d { twiddles: twiddle_table(n), radix2: n.is_power_of_two() }
    }

    fn run(&self, buf: &mut [Complex64]) {
        if self.radix2 {
            fft_in_place(buf, &self.twiddles);
        } else {
            let out = dft_direct(buf, &self.twiddles);
            buf.copy_from_slice(&out);
        }
    }
}

fn dft2_with(img: &Image, shifted: bool, force_direct: bool) -> Spectrum {
    let (w, h) = (img.width(), img.height());
    let mut data: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();

    let mut row_tf = Transform1d::new(w);
    let mut col_tf = Transform1d::new(h);
    if force_direct {
        row_tf.radix2 = false;
        col_tf.radix2 = false;
    }
    for row in data.chunks_exact_mut(w) {
        row_tf.run(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        col_tf.run(&mut col);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }

    if shifted {
        let mut out = vec![Complex64::new(0.0, 0.0); w * h];
        for v in 0..h {
            for u in 0..w {
                out[((v + h / 2) % h) * w + (u + w / 2) % w] = data[v * w + u];
            }
        }
        data = out;
    }
    Spectrum { width: w, height: h, data, shifted }
}

/// Unnormalized forward 2D DFT, optionally with DC moved to the grid center.
pub fn dft2(img: &Image, shifted: bool) -> Spectrum {
    dft2_with(img, shifted, false)
}

/// Same as [`dft2`] but never uses the radix-2 path.
pub fn dft2_direct(img: &Image, shifted: bool) -> Spectrum {
    dft2_with(img, shifted, true)
}

/// True where a shifted-spectrum bin lies strictly beyond normalized radius `rho`.
pub fn high_frequency_mask(width: usize, height: usize, rho: f64) -> Vec<bool> {
    let (cx, cy) = ((width / 2) as f64, (height / 2) as f64);
    let unit = width.min(height) as f64 / 2.0;
    let mut mask = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let d = ((u as f64 - cx).powi(2) + (v as f64 - cy).powi(2)).sqrt() / unit;
            mask.push(d > rho);
        }
    }
    mask
}

/// Fraction of spectral magnitude outside the low-frequency disc.
pub fn hf_ratio(img: &Image, params: &HfParams) -> f64 {
    let spectrum = dft2(img, true);
    let mask = high_frequency_mask(spectrum.width, spectrum.height, params.rho);
    let mut high = 0.0;
    let mut total = 0.0;
    for (c, &is_high) in spectrum.data.iter().zip(&mask) {
        let m = c.norm();
        total += m;
        if is_high {
            high += m;
        }
    }
    high / (total + params.epsilon)
}
