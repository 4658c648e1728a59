//! Single-channel and RGB rasters, resampling, and file I/O.
//!
//! Pixel storage is `f32` so that the native raw format round-trips
//! losslessly. Arithmetic inside the resamplers runs in `f64` and is
//! rounded once on output.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const RAW_MAGIC: &str = "SKVR1";

/// Grayscale raster, row-major, intensities nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Interleaved RGB raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Result of [`load_image`]; the file decides which kind comes back.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedImage {
    Gray(Image),
    Color(ColorImage),
}

impl LoadedImage {
    /// Collapses either variant to grayscale.
    pub fn into_gray(self) -> Image {
        match self {
            LoadedImage::Gray(img) => img,
            LoadedImage::Color(c) => to_grayscale(&c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm8,
    RawF32,
}

impl std::str::FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm8" | "pgm" => Ok(ImageFormat::Pgm8),
            "rawf32" | "raw" => Ok(ImageFormat::RawF32),
            other => Err(Error::InvalidParameter(format!("unknown image format {other:?}"))),
        }
    }
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!("{width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::InvalidDimensions(format!(
                "{width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Result<Self> {
        Image::new(width, height, vec![value; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with replicated borders.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    pub fn clamped(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn transposed(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for x in 0..self.width {
            for y in 0..self.height {
                data.push(self.get(x, y));
            }
        }
        Image { width: self.height, height: self.width, data }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl ColorImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!("{width}x{height}")));
        }
        if data.len() != 3 * width * height {
            return Err(Error::InvalidDimensions(format!(
                "{width}x{height} RGB needs {} samples, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(ColorImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Rec.601 luma.
pub fn to_grayscale(c: &ColorImage) -> Image {
    let data = c
        .data
        .chunks_exact(3)
        .map(|px| {
            let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            y.clamp(0.0, 1.0) as f32
        })
        .collect();
    Image { width: c.width, height: c.height, data }
}

/// One output sample's contributing source range and normalized weights.
struct AreaTap {
    start: usize,
    weights: Vec<f64>,
}

fn area_taps(src: usize, dst: usize) -> Vec<AreaTap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = if i + 1 == dst { src as f64 } else { (i + 1) as f64 * scale };
            let start = lo.floor() as usize;
            let end = (hi.ceil() as usize).min(src);
            let mut weights: Vec<f64> = (start..end)
                .map(|j| (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0))
                .collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            AreaTap { start, weights }
        })
        .collect()
}

/// Weighted mean anchored at the first sample: constant inputs come back
/// bit-exact and the result never leaves the hull of its inputs.
fn anchored_mean(tap: &AreaTap, sample: impl Fn(usize) -> f64) -> f64 {
    let anchor = sample(tap.start);
    let mut acc = 0.0;
    let mut lo = anchor;
    let mut hi = anchor;
    for (offset, &w) in tap.weights.iter().enumerate() {
        let v = sample(tap.start + offset);
        lo = lo.min(v);
        hi = hi.max(v);
        acc += w * (v - anchor);
    }
    (anchor + acc).clamp(lo, hi)
}

/// Exact area-weighted downsampling.
pub fn resize_area(img: &Image, w: usize, h: usize) -> Result<Image> {
    if w == 0 || h == 0 {
        return Err(Error::InvalidDimensions(format!("target {w}x{h}")));
    }
    if w > img.width || h > img.height {
        return Err(Error::Upscale { from_w: img.width, from_h: img.height, to_w: w, to_h: h });
    }
    if w == img.width && h == img.height {
        return Ok(img.clone());
    }

    let xtaps = area_taps(img.width, w);
    let ytaps = area_taps(img.height, h);

    let mut rows = vec![0.0f64; w * img.height];
    for y in 0..img.height {
        let row = &img.data[y * img.width..(y + 1) * img.width];
        for (x, tap) in xtaps.iter().enumerate() {
            rows[y * w + x] = anchored_mean(tap, |j| row[j] as f64);
        }
    }

    let mut data = vec![0.0f32; w * h];
    for (y, tap) in ytaps.iter().enumerate() {
        for x in 0..w {
            data[y * w + x] = anchored_mean(tap, |j| rows[j * w + x]) as f32;
        }
    }
    Ok(Image { width: w, height: h, data })
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn bilinear_coords(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 || src == 1 {
                0.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling with corner-aligned sample grids.
pub fn resize_bilinear(img: &Image, w: usize, h: usize) -> Result<Image> {
    if w == 0 || h == 0 {
        return Err(Error::InvalidDimensions(format!("target {w}x{h}")));
    }
    if w == img.width && h == img.height {
        return Ok(img.clone());
    }
    let xs = bilinear_coords(img.width, w);
    let ys = bilinear_coords(img.height, h);
    let mut data = Vec::with_capacity(w * h);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let p00 = img.get(x0, y0) as f64;
            let p10 = img.get(x1, y0) as f64;
            let p01 = img.get(x0, y1) as f64;
            let p11 = img.get(x1, y1) as f64;
            let lo = p00.min(p10).min(p01).min(p11);
            let hi = p00.max(p10).max(p01).max(p11);
            let v = lerp(lerp(p00, p10, tx), lerp(p01, p11, tx), ty).clamp(lo, hi);
            data.push(v as f32);
        }
    }
    Ok(Image { width: w, height: h, data })
}

/// Area-averages when shrinking, bilinear otherwise.
pub fn resample(img: &Image, w: usize, h: usize) -> Result<Image> {
    if w <= img.width && h <= img.height {
        resize_area(img, w, h)
    } else {
        resize_bilinear(img, w, h)
    }
}

/// Reads binary PGM (P5), binary PPM (P6), or the native raw-float format.
pub fn load_image(path: impl AsRef<Path>) -> Result<LoadedImage> {
    let bytes = fs::read(path.as_ref())?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<LoadedImage> {
    if bytes.starts_with(RAW_MAGIC.as_bytes()) {
        return decode_raw(bytes).map(LoadedImage::Gray);
    }
    if bytes.len() < 2 {
        return Err(Error::Format("file too short".into()));
    }
    match &bytes[..2] {
        b"P5" => {
            let (w, h, body) = parse_pnm_header(bytes)?;
            let need = w * h;
            if body.len() < need {
                return Err(Error::Format(format!("truncated PGM data: need {need} bytes, have {}", body.len())));
            }
            let data = body[..need].iter().map(|&b| b as f32 / 255.0).collect();
            Image::new(w, h, data).map(LoadedImage::Gray)
        }
        b"P6" => {
            let (w, h, body) = parse_pnm_header(bytes)?;
            let need = 3 * w * h;
            if body.len() < need {
                return Err(Error::Format(format!("truncated PPM data: need {need} bytes, have {}", body.len())));
            }
            let data = body[..need].iter().map(|&b| b as f32 / 255.0).collect();
            ColorImage::new(w, h, data).map(LoadedImage::Color)
        }
        _ => Err(Error::Format("unrecognized magic; expected P5, P6 or SKVR1".into())),
    }
}

/// Returns (width, height, pixel bytes).
fn parse_pnm_header(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("expected a number in header at byte {start}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::Format(format!("header value {text:?} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(Error::Format(format!("degenerate size {w}x{h}")));
    }
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}; only 255 is supported")));
    }
    Ok((w, h, &bytes[pos..]))
}

fn decode_raw(bytes: &[u8]) -> Result<Image> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("raw header missing newline".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Format("raw header is not ASCII".into()))?;
    let mut parts = header.split(' ');
    let (magic, w, h) = (parts.next(), parts.next(), parts.next());
    if magic != Some(RAW_MAGIC) || parts.next().is_some() {
        return Err(Error::Format(format!("malformed raw header {header:?}")));
    }
    let parse = |s: Option<&str>| -> Result<usize> {
        s.and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("malformed raw header {header:?}")))
    };
    let (w, h) = (parse(w)?, parse(h)?);
    let body = &bytes[nl + 1..];
    let need = 4 * w * h;
    if body.len() != need {
        return Err(Error::Format(format!("raw body is {} bytes, expected {need}", body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Image::new(w, h, data)
}

pub fn encode_image(img: &Image, format: ImageFormat) -> Vec<u8> {
    match format {
        ImageFormat::Pgm8 => {
            let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
            out.extend(img.data.iter().map(|&v| quantize_u8(v)));
            out
        }
        ImageFormat::RawF32 => {
            let mut out = format!("{RAW_MAGIC} {} {}\n", img.width, img.height).into_bytes();
            out.reserve(4 * img.data.len());
            for v in &img.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out
        }
    }
}

/// round-half-up of `v * 255`, clamped to the byte range.
pub fn quantize_u8(v: f32) -> u8 {
    let scaled = (v as f64 * 255.0 + 0.5).floor();
    if scaled.is_nan() {
        0
    } else {
        scaled.clamp(0.0, 255.0) as u8
    }
}

pub fn save_image(img: &Image, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let mut file = fs::File::create(path.as_ref())?;
    file.write_all(&encode_image(img, format))?;
    Ok(())
}
