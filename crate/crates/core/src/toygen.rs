//! Deterministic stand-in for a coarse-to-fine generator.
//!
//! Step `k` renders the target at resolution `r_k` (conditional branch),
//! perturbs it with geometrically decaying smoothed noise (unconditional
//! branch) and mixes the two with guidance `g`:
//!
//! ```text
//! C_k = area(target, r_k)
//! U_k = C_k + alpha * gamma^(k-1) * box3(noise_k)   (box3 output standardized to std 1/3)
//! I_k = clamp(U_k + g * (C_k - U_k))
//! ```
//!
//! Each branch pass of step `k` costs `w_k`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{load_image, resize_area, resize_bilinear, save_image, Image, ImageFormat};
use crate::metrics::l1_mean;
use crate::seed::mix;

pub const DEFAULT_SCHEDULE: [usize; 12] = [8, 16, 24, 32, 48, 64, 96, 128, 160, 192, 224, 256];
pub const DEFAULT_LATE_SHARE: f64 = 0.69;
pub const DEFAULT_LATE_STEPS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub steps: usize,
    pub schedule: Vec<usize>,
    pub guidance: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
    pub cost_weights: Vec<f64>,
}

impl Default for TraceConfig {
    fn default() -> Self {
        let schedule = DEFAULT_SCHEDULE.to_vec();
        let cost_weights = calibrated_weights(&schedule, DEFAULT_LATE_STEPS, DEFAULT_LATE_SHARE)
            .expect("default schedule is valid");
        TraceConfig { steps: 12, schedule, guidance: 2.0, alpha: 0.15, gamma: 0.6, seed: 0, cost_weights }
    }
}

/// Weights proportional to `r_k^2` within the early and late groups, each
/// group rescaled so the final `late_steps` entries sum to `late_share`.
pub fn calibrated_weights(schedule: &[usize], late_steps: usize, late_share: f64) -> Result<Vec<f64>> {
    if late_steps == 0 || late_steps >= schedule.len() {
        return Err(Error::InvalidParameter(format!(
            "late group size {late_steps} must be in 1..{}",
            schedule.len()
        )));
    }
    if !(late_share > 0.0 && late_share < 1.0) {
        return Err(Error::InvalidParameter(format!("late share must lie in (0, 1), got {late_share}")));
    }
    let split = schedule.len() - late_steps;
    let area = |r: &usize| (*r as f64) * (*r as f64);
    let early: f64 = schedule[..split].iter().map(area).sum();
    let late: f64 = schedule[split..].iter().map(area).sum();
    Ok(schedule
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if i < split {
                area(r) / early * (1.0 - late_share)
            } else {
                area(r) / late * late_share
            }
        })
        .collect())
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.steps;
        if k < 4 {
            return Err(Error::Config(format!("steps must be >= 4, got {k}")));
        }
        if self.schedule.len() != k {
            return Err(Error::Config(format!("schedule has {} entries, steps = {k}", self.schedule.len())));
        }
        if self.schedule[0] == 0 || self.schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("schedule must be positive and strictly increasing".into()));
        }
        if self.cost_weights.len() != k {
            return Err(Error::Config(format!("cost_weights has {} entries, steps = {k}", self.cost_weights.len())));
        }
        if self.cost_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("cost_weights must be finite and non-negative".into()));
        }
        let total: f64 = self.cost_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("cost_weights must sum to 1, got {total}")));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !self.guidance.is_finite() {
            return Err(Error::Config("guidance must be finite".into()));
        }
        Ok(())
    }

    pub fn final_resolution(&self) -> usize {
        *self.schedule.last().expect("validated schedule")
    }

    pub fn with_seed(&self, seed: u64) -> TraceConfig {
        TraceConfig { seed, ..self.clone() }
    }

    /// Baseline cost of a full run: both branches at every step.
    pub fn baseline_cost(&self) -> f64 {
        2.0 * self.cost_weights.iter().sum::<f64>()
    }
}

/// Procedural target: smooth Gaussian blobs over a background, an oriented
/// sinusoidal texture, a coarse shading wave and optional white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub background: f64,
    pub blob_count: usize,
    /// Blob standard deviation as a fraction of the image side.
    pub blob_sigma: f64,
    pub blob_amplitude: f64,
    /// Full periods across the image side.
    pub texture_cycles: f64,
    pub texture_amplitude: f64,
    /// Radians.
    pub texture_orientation: f64,
    /// Coarse sinusoidal shading; same units as the texture.
    #[serde(default)]
    pub wave_cycles: f64,
    #[serde(default)]
    pub wave_amplitude: f64,
    #[serde(default)]
    pub wave_orientation: f64,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Recipe {
    pub fn blobs(blob_count: usize, seed: u64) -> Recipe {
        Recipe {
            background: 0.5,
            blob_count,
            blob_sigma: 0.12,
            blob_amplitude: 0.3,
            texture_cycles: 0.0,
            texture_amplitude: 0.0,
            texture_orientation: 0.0,
            wave_cycles: 0.0,
            wave_amplitude: 0.0,
            wave_orientation: 0.0,
            noise_amplitude: 0.0,
            seed,
        }
    }

    pub fn sinusoid(cycles: f64, amplitude: f64, orientation: f64, seed: u64) -> Recipe {
        Recipe {
            background: 0.5,
            blob_count: 0,
            blob_sigma: 0.12,
            blob_amplitude: 0.0,
            texture_cycles: cycles,
            texture_amplitude: amplitude,
            texture_orientation: orientation,
            wave_cycles: 0.0,
            wave_amplitude: 0.0,
            wave_orientation: 0.0,
            noise_amplitude: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("background", self.background)?;
        unit("blob_amplitude", self.blob_amplitude)?;
        unit("texture_amplitude", self.texture_amplitude)?;
        unit("wave_amplitude", self.wave_amplitude)?;
        unit("noise_amplitude", self.noise_amplitude)?;
        if self.blob_count > 0 && !(self.blob_sigma > 0.0 && self.blob_sigma <= 1.0) {
            return Err(Error::InvalidParameter(format!("blob_sigma must lie in (0, 1], got {}", self.blob_sigma)));
        }
        if !(self.texture_cycles >= 0.0 && self.texture_cycles.is_finite()) {
            return Err(Error::InvalidParameter(format!("texture_cycles must be >= 0, got {}", self.texture_cycles)));
        }
        if !(self.wave_cycles >= 0.0 && self.wave_cycles.is_finite()) {
            return Err(Error::InvalidParameter(format!("wave_cycles must be >= 0, got {}", self.wave_cycles)));
        }
        if !self.texture_orientation.is_finite() || !self.wave_orientation.is_finite() {
            return Err(Error::InvalidParameter("orientations must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    File { path: PathBuf },
    Procedural(Recipe),
}

/// Renders (or loads) a target at `size x size`. Output is clamped to `[0, 1]`.
pub fn synth_target(spec: &TargetSpec, size: usize) -> Result<Image> {
    if size == 0 {
        return Err(Error::InvalidParameter("target size must be >= 1".into()));
    }
    match spec {
        TargetSpec::File { path } => {
            let img = load_image(path)?.into_gray();
            if img.width() != size || img.height() != size {
                return Err(Error::InvalidDimensions(format!(
                    "{} is {}x{}, expected {size}x{size}",
                    path.display(),
                    img.width(),
                    img.height()
                )));
            }
            Ok(img.clamped())
        }
        TargetSpec::Procedural(r) => render_recipe(r, size),
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    amp: f64,
}

fn render_recipe(r: &Recipe, size: usize) -> Result<Image> {
    r.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
    let blobs: Vec<Blob> = (0..r.blob_count)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Blob {
                cx: rng.random_range(0.15..0.85),
                cy: rng.random_range(0.15..0.85),
                sigma: r.blob_sigma * rng.random_range(0.7..1.3),
                amp: sign * r.blob_amplitude * rng.random_range(0.5..1.0),
            }
        })
        .collect();
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let wave_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dir_x, dir_y) = (r.texture_orientation.cos(), r.texture_orientation.sin());
    let (wave_x, wave_y) = (r.wave_orientation.cos(), r.wave_orientation.sin());
    let n = size as f64;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix(r.seed, 0x6e6f697365));

    Image::from_fn(size, size, |x, y| {
        // sample at pixel centers in unit coordinates
        let u = (x as f64 + 0.5) / n;
        let v = (y as f64 + 0.5) / n;
        let mut val = r.background;
        for b in &blobs {
            let d2 = (u - b.cx).powi(2) + (v - b.cy).powi(2);
            val += b.amp * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
        }
        if r.texture_amplitude > 0.0 {
            let t = (u * dir_x + v * dir_y) * r.texture_cycles;
            val += r.texture_amplitude * (std::f64::consts::TAU * t + phase).sin();
        }
        if r.wave_amplitude > 0.0 {
            let t = (u * wave_x + v * wave_y) * r.wave_cycles;
            val += r.wave_amplitude * (std::f64::consts::TAU * t + wave_phase).sin();
        }
        if r.noise_amplitude > 0.0 {
            let z: f64 = noise_rng.sample(StandardNormal);
            val += r.noise_amplitude * z;
        }
        val.clamp(0.0, 1.0) as f32
    })
}

/// How a step's branches are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepMode {
    /// Conditional and unconditional passes.
    Full,
    /// Unconditional branch replaced by the conditional output; one pass.
    CondOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub index: usize,
    pub cond: Image,
    pub uncond: Image,
    pub combined: Image,
    /// Cost of one branch pass at this step.
    pub branch_cost: f64,
    pub mode: StepMode,
}

impl Step {
    pub fn passes(&self) -> usize {
        match self.mode {
            StepMode::Full => 2,
            StepMode::CondOnly => 1,
        }
    }

    pub fn cost(&self) -> f64 {
        self.passes() as f64 * self.branch_cost
    }
}

/// Steps produced so far, in order. A full trace holds all `K` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub target: Image,
    pub config: TraceConfig,
    pub steps: Vec<Step>,
}

impl StepTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// 1-based step lookup.
    pub fn step(&self, k: usize) -> Result<&Step> {
        if k == 0 || k > self.steps.len() {
            return Err(Error::IndexOutOfRange { index: k, len: self.steps.len() });
        }
        Ok(&self.steps[k - 1])
    }

    pub fn last(&self) -> Option<&Step> {
        self.steps.last()
    }

    /// Sum of executed branch passes weighted by their step cost.
    pub fn cost(&self) -> f64 {
        self.steps.iter().map(Step::cost).sum()
    }
}

/// Incremental step evaluator for one (target, config) pair.
pub struct Generator<'a> {
    target: &'a Image,
    config: &'a TraceConfig,
}

impl<'a> Generator<'a> {
    pub fn new(target: &'a Image, config: &'a TraceConfig) -> Result<Self> {
        config.validate()?;
        let r = config.final_resolution();
        if target.width() != r || target.height() != r {
            return Err(Error::InvalidDimensions(format!(
                "target is {}x{}, final resolution is {r}x{r}",
                target.width(),
                target.height()
            )));
        }
        Ok(Generator { target, config })
    }

    /// Smoothed, scaled unconditional-branch offset for step `k` (1-based).
    fn perturbation(&self, k: usize) -> Vec<f64> {
        let r = self.config.schedule[k - 1];
        let scale = self.config.alpha * self.config.gamma.powi(k as i32 - 1);
        if scale == 0.0 {
            return vec![0.0; r * r];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.config.seed, k as u64));
        let noise: Vec<f64> = (0..r * r).map(|_| rng.sample(StandardNormal)).collect();
        let at = |x: isize, y: isize| {
            let x = x.clamp(0, r as isize - 1) as usize;
            let y = y.clamp(0, r as isize - 1) as usize;
            noise[y * r + x]
        };
        let mut smooth = Vec::with_capacity(r * r);
        for y in 0..r as isize {
            for x in 0..r as isize {
                let mut acc = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        acc += at(x + dx, y + dy);
                    }
                }
                smooth.push(acc / 9.0);
            }
        }
        // Rescale to zero mean and std 1/3, the box-filtered std of unit
        // noise. At 8x8 the raw draw alone swings the amplitude by tens of
        // percent, which would break the decay across steps.
        let n = smooth.len() as f64;
        let mean = smooth.iter().sum::<f64>() / n;
        let std = (smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let norm = if std > 0.0 { scale / (3.0 * std) } else { 0.0 };
        smooth.iter().map(|v| (v - mean) * norm).collect()
    }

    pub fn step(&self, k: usize, mode: StepMode) -> Result<Step> {
        let steps = self.config.steps;
        if k == 0 || k > steps {
            return Err(Error::IndexOutOfRange { index: k, len: steps });
        }
        let r = self.config.schedule[k - 1];
        let cond = resize_area(self.target, r, r)?;
        let uncond = match mode {
            StepMode::Full => {
                let delta = self.perturbation(k);
                Image::new(
                    r,
                    r,
                    cond.data().iter().zip(&delta).map(|(&c, d)| (c as f64 + d) as f32).collect(),
                )?
            }
            StepMode::CondOnly => cond.clone(),
        };
        let g = self.config.guidance;
        let combined = Image::new(
            r,
            r,
            cond.data()
                .iter()
                .zip(uncond.data())
                .map(|(&c, &u)| {
                    let (c, u) = (c as f64, u as f64);
                    (u + g * (c - u)).clamp(0.0, 1.0) as f32
                })
                .collect(),
        )?;
        Ok(Step { index: k, cond, uncond, combined, branch_cost: self.config.cost_weights[k - 1], mode })
    }

    /// Runs steps `1..=modes.len()` with the given per-step modes.
    pub fn run(&self, modes: &[StepMode]) -> Result<StepTrace> {
        let steps = modes
            .iter()
            .enumerate()
            .map(|(i, &m)| self.step(i + 1, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(StepTrace { target: self.target.clone(), config: self.config.clone(), steps })
    }
}

/// Full `K`-step trace with both branches at every step.
pub fn generate_trace(target: &Image, cfg: &TraceConfig) -> Result<StepTrace> {
    Generator::new(target, cfg)?.run(&vec![StepMode::Full; cfg.steps])
}

/// `l1_mean(C_k, U_k)`.
pub fn branch_gap(trace: &StepTrace, k: usize) -> Result<f64> {
    let s = trace.step(k)?;
    l1_mean(&s.cond, &s.uncond)
}

/// Output obtained by stopping after step `stop`: `I_stop` upsampled to
/// the final resolution. Stopping at `K` returns `I_K` unchanged.
pub fn decode_final(trace: &StepTrace, stop: usize) -> Result<Image> {
    let s = trace.step(stop)?;
    let r = trace.config.final_resolution();
    if stop == trace.config.steps {
        return Ok(s.combined.clone());
    }
    resize_bilinear(&s.combined, r, r)
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceManifest {
    steps: usize,
    schedule: Vec<usize>,
    seed: u64,
    guidance: f64,
    alpha: f64,
    gamma: f64,
    cost_weights: Vec<f64>,
    modes: Vec<StepMode>,
}

/// Writes `manifest.json`, `target.raw` and `cond_k.raw` / `uncond_k.raw` / `comb_k.raw`.
pub fn save_trace(trace: &StepTrace, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let c = &trace.config;
    let manifest = TraceManifest {
        steps: c.steps,
        schedule: c.schedule.clone(),
        seed: c.seed,
        guidance: c.guidance,
        alpha: c.alpha,
        gamma: c.gamma,
        cost_weights: c.cost_weights.clone(),
        modes: trace.steps.iter().map(|s| s.mode).collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    save_image(&trace.target, dir.join("target.raw"), ImageFormat::RawF32)?;
    for s in &trace.steps {
        save_image(&s.cond, dir.join(format!("cond_{}.raw", s.index)), ImageFormat::RawF32)?;
        save_image(&s.uncond, dir.join(format!("uncond_{}.raw", s.index)), ImageFormat::RawF32)?;
        save_image(&s.combined, dir.join(format!("comb_{}.raw", s.index)), ImageFormat::RawF32)?;
    }
    Ok(())
}

pub fn load_trace(dir: impl AsRef<Path>) -> Result<StepTrace> {
    let dir = dir.as_ref();
    let manifest: TraceManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let config = TraceConfig {
        steps: manifest.steps,
        schedule: manifest.schedule,
        guidance: manifest.guidance,
        alpha: manifest.alpha,
        gamma: manifest.gamma,
        seed: manifest.seed,
        cost_weights: manifest.cost_weights,
    };
    config.validate()?;
    let target = load_image(dir.join("target.raw"))?.into_gray();
    let load = |name: String| load_image(dir.join(name)).map(|i| i.into_gray());
    let steps = manifest
        .modes
        .iter()
        .enumerate()
        .map(|(i, &mode)| {
            let k = i + 1;
            Ok(Step {
                index: k,
                cond: load(format!("cond_{k}.raw"))?,
                uncond: load(format!("uncond_{k}.raw"))?,
                combined: load(format!("comb_{k}.raw"))?,
                branch_cost: config.cost_weights[i],
                mode,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StepTrace { target, config, steps })
}
