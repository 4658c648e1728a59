//! Fidelity metrics: SSIM, SSIM restricted to high-gradient regions of the
//! reference, and mean absolute difference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::sobel_magnitude;
use crate::imagecore::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 1.0 }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("SSIM window must be odd and >= 3, got {}", self.window)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("SSIM sigma must be positive, got {}", self.sigma)));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::InvalidParameter("SSIM k1, k2 and dynamic range must be positive".into()));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1D Gaussian taps.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let mut taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-(d * d) / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= total);
        taps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HfMaskParams {
    pub quantile: f64,
}

impl Default for HfMaskParams {
    fn default() -> Self {
        HfMaskParams { quantile: 0.75 }
    }
}

impl HfMaskParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::InvalidParameter(format!("mask quantile must lie in (0, 1), got {}", self.quantile)));
        }
        Ok(())
    }
}

/// Mirror index without repeating the edge sample (`-1 -> 1`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    j.clamp(0, n - 1) as usize
}

fn blur(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * row[reflect(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * tmp[reflect(y as isize + k as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn check_pair(a: &Image, b: &Image, p: &SsimParams) -> Result<()> {
    a.same_dims(b)?;
    p.validate()?;
    if a.width() < p.window || a.height() < p.window {
        return Err(Error::InvalidDimensions(format!(
            "SSIM needs images of at least {0}x{0}, got {1}x{2}",
            p.window,
            a.width(),
            a.height()
        )));
    }
    Ok(())
}

/// Full-resolution SSIM map in `f64`.
pub fn ssim_values(a: &Image, b: &Image, p: &SsimParams) -> Result<Vec<f64>> {
    check_pair(a, b, p)?;
    let (w, h) = (a.width(), a.height());
    let taps = p.kernel();
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

    let mu_x = blur(&x, w, h, &taps);
    let mu_y = blur(&y, w, h, &taps);
    let e_xx = blur(&xx, w, h, &taps);
    let e_yy = blur(&yy, w, h, &taps);
    let e_xy = blur(&xy, w, h, &taps);

    let (c1, c2) = (p.c1(), p.c2());
    Ok((0..w * h)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .collect())
}

/// Per-pixel SSIM with Gaussian local statistics and reflect padding.
pub fn ssim_map(a: &Image, b: &Image, p: &SsimParams) -> Result<Image> {
    let values = ssim_values(a, b, p)?;
    Image::new(a.width(), a.height(), values.into_iter().map(|v| v as f32).collect())
}

pub fn ssim(a: &Image, b: &Image, p: &SsimParams) -> Result<f64> {
    let values = ssim_values(a, b, p)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Linear-interpolated quantile of `values` (sorted copy).
pub fn quantile(values: &[f32], q: f64) -> f32 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = pos - lo as f64;
    (sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * t) as f32
}

/// Pixels whose reference Sobel magnitude is at or above the quantile value.
pub fn high_frequency_region(reference: &Image, m: &HfMaskParams) -> Result<Vec<bool>> {
    m.validate()?;
    let grad = sobel_magnitude(reference)?;
    let threshold = quantile(grad.data(), m.quantile);
    Ok(grad.data().iter().map(|&g| g >= threshold).collect())
}

/// SSIM averaged over the high-gradient region of `a` (the reference).
pub fn ssim_hf(a: &Image, b: &Image, p: &SsimParams, m: &HfMaskParams) -> Result<f64> {
    let values = ssim_values(a, b, p)?;
    let mask = high_frequency_region(a, m)?;
    let (sum, count) = values
        .iter()
        .zip(&mask)
        .filter(|(_, &keep)| keep)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    if count == 0 {
        return Ok(values.iter().sum::<f64>() / values.len() as f64);
    }
    Ok(sum / count as f64)
}

pub fn l1_mean(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| (p as f64 - q as f64).abs())
        .sum();
    Ok(total / a.data().len() as f64)
}
