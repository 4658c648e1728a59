//! Straight-line reference implementations and fixed datasets shared by
//! the integration tests. Nothing here calls into the crate's numerics.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use skipvar::decision::FeatureVector;
use skipvar::imagecore::Image;
use skipvar::strategies::Strategy;

pub fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, |_, _| rng.random::<f32>()).unwrap()
}

pub fn pixels(img: &Image) -> Vec<f64> {
    img.data().iter().map(|&v| v as f64).collect()
}

/// Exact box-overlap downsampling.
pub fn area_resize(src: &[f64], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f64> {
    let sx = w as f64 / nw as f64;
    let sy = h as f64 / nh as f64;
    let mut out = vec![0.0; nw * nh];
    for oy in 0..nh {
        for ox in 0..nw {
            let (x0, x1) = (ox as f64 * sx, (ox + 1) as f64 * sx);
            let (y0, y1) = (oy as f64 * sy, (oy + 1) as f64 * sy);
            let mut acc = 0.0;
            for y in 0..h {
                let wy = ((y + 1) as f64).min(y1) - (y as f64).max(y0);
                if wy <= 0.0 {
                    continue;
                }
                for x in 0..w {
                    let wx = ((x + 1) as f64).min(x1) - (x as f64).max(x0);
                    if wx > 0.0 {
                        acc += wx * wy * src[y * w + x];
                    }
                }
            }
            out[oy * nw + ox] = acc / (sx * sy);
        }
    }
    out
}

pub fn sobel(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        src[yc * w + xc]
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1);
            let gy = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1);
            out[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Inputs must be downsampled (or kept) to `n x n`.
pub fn hf_diff(a: &Image, b: &Image, n: usize) -> f64 {
    let ra = area_resize(&pixels(a), a.width(), a.height(), n, n);
    let rb = area_resize(&pixels(b), b.width(), b.height(), n, n);
    let (sa, sb) = (sobel(&ra, n, n), sobel(&rb, n, n));
    sa.iter().zip(&sb).map(|(p, q)| (p - q).abs()).sum::<f64>() / (n * n) as f64
}

/// Direct O(N^4) DFT magnitudes indexed by signed frequency `(fu, fv)`.
pub fn dft_magnitudes(img: &Image) -> Vec<(isize, isize, f64)> {
    let (w, h) = (img.width(), img.height());
    let px = pixels(img);
    let mut out = Vec::with_capacity(w * h);
    for kv in 0..h {
        for ku in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * ((ku * x) as f64 / w as f64 + (kv * y) as f64 / h as f64);
                    re += px[y * w + x] * phase.cos();
                    im += px[y * w + x] * phase.sin();
                }
            }
            let signed = |k: usize, n: usize| if k < n / 2 { k as isize } else { k as isize - n as isize };
            out.push((signed(ku, w), signed(kv, h), (re * re + im * im).sqrt()));
        }
    }
    out
}

pub fn hf_ratio(img: &Image, rho: f64, eps: f64) -> f64 {
    let unit = img.width().min(img.height()) as f64 / 2.0;
    let (mut high, mut total) = (0.0, 0.0);
    for (fu, fv, m) in dft_magnitudes(img) {
        total += m;
        if ((fu * fu + fv * fv) as f64).sqrt() / unit > rho {
            high += m;
        }
    }
    high / (total + eps)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
    j as usize
}

/// Per-pixel SSIM with an explicit 2D Gaussian window (11 taps, sigma 1.5),
/// reflect padding and L = 1.
pub fn ssim_map(a: &Image, b: &Image) -> Vec<f64> {
    let (w, h) = (a.width(), a.height());
    let (pa, pb) = (pixels(a), pixels(b));
    let r = 5isize;
    let mut win = Vec::new();
    let mut total = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let g = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp();
            win.push((dx, dy, g));
            total += g;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let sample = |p: &[f64], dx: isize, dy: isize| {
                p[reflect(y as isize + dy, h) * w + reflect(x as isize + dx, w)]
            };
            let mut mx = 0.0;
            let mut my = 0.0;
            for &(dx, dy, g) in &win {
                mx += g / total * sample(&pa, dx, dy);
                my += g / total * sample(&pb, dx, dy);
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for &(dx, dy, g) in &win {
                let ex = sample(&pa, dx, dy) - mx;
                let ey = sample(&pb, dx, dy) - my;
                vx += g / total * ex * ex;
                vy += g / total * ey * ey;
                cov += g / total * ex * ey;
            }
            out[y * w + x] =
                ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    out
}

pub fn ssim(a: &Image, b: &Image) -> f64 {
    let m = ssim_map(a, b);
    m.iter().sum::<f64>() / m.len() as f64
}

/// Mean SSIM over pixels whose reference Sobel magnitude reaches the
/// linearly interpolated 0.75 quantile.
pub fn ssim_hf(a: &Image, b: &Image) -> f64 {
    let m = ssim_map(a, b);
    let grad = sobel(&pixels(a), a.width(), a.height());
    let mut sorted = grad.clone();
    sorted.sort_by(f64::total_cmp);
    let pos = 0.75 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let threshold = sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64);
    let kept: Vec<f64> = m.iter().zip(&grad).filter(|(_, &g)| g >= threshold).map(|(v, _)| *v).collect();
    if kept.is_empty() {
        return m.iter().sum::<f64>() / m.len() as f64;
    }
    kept.iter().sum::<f64>() / kept.len() as f64
}

pub const SEPARABLE_SEED: u64 = 17;

/// Two feature-scale Gaussian clusters, 60 points each.
pub fn separable_set() -> (Vec<FeatureVector>, Vec<Strategy>) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEPARABLE_SEED);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..120 {
        let (cx, cy, label) =
            if i % 2 == 0 { (0.02, 0.15, Strategy::Skip(3)) } else { (0.08, 0.55, Strategy::UncondReplace(3)) };
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        xs.push(FeatureVector::new(cx + 0.003 * dx, cy + 0.03 * dy));
        ys.push(label);
    }
    (xs, ys)
}

/// Smallest Euclidean distance between differently labeled points after
/// per-feature z-scoring.
pub fn standardized_margin(xs: &[FeatureVector], ys: &[Strategy]) -> f64 {
    let n = xs.len() as f64;
    let cols: Vec<Vec<f64>> = (0..2).map(|j| xs.iter().map(|f| f.to_array()[j]).collect()).collect();
    let stats: Vec<(f64, f64)> = cols
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n;
            let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            (m, v.sqrt())
        })
        .collect();
    let z = |f: &FeatureVector| {
        let a = f.to_array();
        [(a[0] - stats[0].0) / stats[0].1, (a[1] - stats[1].0) / stats[1].1]
    };
    let mut best = f64::INFINITY;
    for i in 0..xs.len() {
        for j in 0..xs.len() {
            if ys[i] != ys[j] {
                let (p, q) = (z(&xs[i]), z(&xs[j]));
                best = best.min(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
    }
    best
}

/// Exhaustive weighted-Gini split search: every feature, every midpoint
/// between adjacent distinct values. Ties keep the first candidate found.
pub fn exhaustive_split(x: &[[f64; 2]], y: &[usize], classes: usize, min_leaf: usize) -> Option<(usize, f64, f64)> {
    let gini = |rows: &[usize]| {
        if rows.is_empty() {
            return 0.0;
        }
        let mut counts = vec![0.0; classes];
        for &r in rows {
            counts[y[r]] += 1.0;
        }
        1.0 - counts.iter().map(|c| (c / rows.len() as f64).powi(2)).sum::<f64>()
    };
    let all: Vec<usize> = (0..x.len()).collect();
    let parent = gini(&all);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..2 {
        let mut values: Vec<f64> = x.iter().map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let t = 0.5 * (pair[0] + pair[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[i][f] <= t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let imp = (l.len() as f64 * gini(&l) + r.len() as f64 * gini(&r)) / x.len() as f64;
            if best.map_or(imp < parent - 1e-12, |b| imp < b.2 - 1e-12) {
                best = Some((f, t, imp));
            }
        }
    }
    best
}
