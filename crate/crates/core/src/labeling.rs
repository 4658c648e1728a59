//! Ground-truth labels by exhaustive strategy simulation, the procedural
//! corpora, and the frequency-sensitive/robust split.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decision::FeatureVector;
use crate::error::{Error, Result};
use crate::frequency::hf_ratio;
use crate::imagecore::{encode_image, resample, Image, ImageFormat};
use crate::metrics::ssim;
use crate::pipeline::{fan_out, PipelineConfig, StepCache};
use crate::seed::mix;
use crate::strategies::Strategy;
use crate::toygen::{synth_target, Recipe, TargetSpec, TraceConfig};

pub const CORPUS_VERSION: u32 = 1;
pub const DEFAULT_CORPUS_SIZE: usize = 200;
pub const DEFAULT_CORPUS_SEED: u64 = 2024;
pub const DEFAULT_TAU_S: f64 = 0.85;
/// Strategy whose SSIM decides the sensitive/robust split.
pub const PROBE: Strategy = Strategy::Skip(3);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSample {
    pub id: String,
    pub spec: TargetSpec,
    pub trace_seed: u64,
}

impl CorpusSample {
    pub fn render(&self, size: usize) -> Result<Image> {
        synth_target(&self.spec, size)
    }
}

/// Recipe families. `A` and `B` draw from disjoint parameter ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecipeFamily {
    Mixed,
    A,
    B,
}

impl std::str::FromStr for RecipeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(RecipeFamily::Mixed),
            "a" | "A" => Ok(RecipeFamily::A),
            "b" | "B" => Ok(RecipeFamily::B),
            other => Err(Error::Config(format!("unknown corpus family {other:?} (mixed, a, b)"))),
        }
    }
}

impl std::fmt::Display for RecipeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RecipeFamily::Mixed => "mixed",
            RecipeFamily::A => "a",
            RecipeFamily::B => "b",
        })
    }
}

/// Sampling ranges for one family; upper bounds exclusive.
struct FamilyRanges {
    smooth_share: f64,
    blob_count: (usize, usize),
    blob_sigma: (f64, f64),
    blob_amplitude: (f64, f64),
    texture_cycles: (f64, f64),
    texture_amplitude: (f64, f64),
    wave_cycles: (f64, f64),
    wave_amplitude: (f64, f64),
    orientation: (f64, f64),
    tag: u64,
}

// Textured samples pair a detail band just below the analysis Nyquist
// (64 cycles at 128 pixels) with a coarse wave below the rho cutoff; the
// detail share sets both the features and the skip sensitivity.
fn ranges(family: RecipeFamily) -> FamilyRanges {
    let base = FamilyRanges {
        smooth_share: 0.3,
        blob_count: (1, 4),
        blob_sigma: (0.06, 0.2),
        blob_amplitude: (0.1, 0.3),
        texture_cycles: (56.0, 62.0),
        texture_amplitude: (0.02, 0.2),
        wave_cycles: (8.0, 14.0),
        wave_amplitude: (0.03, 0.2),
        orientation: (0.0, PI),
        tag: 0x6d69786564,
    };
    match family {
        RecipeFamily::Mixed => base,
        RecipeFamily::A => FamilyRanges {
            blob_sigma: (0.12, 0.2),
            orientation: (0.0, PI / 2.0),
            tag: 0x66616d5f61,
            ..base
        },
        RecipeFamily::B => FamilyRanges {
            blob_sigma: (0.06, 0.12),
            orientation: (PI / 2.0, PI),
            tag: 0x66616d5f62,
            ..base
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub family: RecipeFamily,
    pub size: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { family: RecipeFamily::Mixed, size: DEFAULT_CORPUS_SIZE, seed: DEFAULT_CORPUS_SEED }
    }
}

/// Deterministic procedural corpus. Ids are `s0000`, `s0001`, ...
pub fn build_corpus(cc: &CorpusConfig) -> Result<Vec<CorpusSample>> {
    if cc.size == 0 {
        return Err(Error::Config("corpus size must be >= 1".into()));
    }
    let fr = ranges(cc.family);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cc.seed, fr.tag));
    Ok((0..cc.size)
        .map(|i| {
            let mut r = Recipe::blobs(rng.random_range(fr.blob_count.0..fr.blob_count.1), mix(cc.seed, 2 * i as u64));
            r.background = rng.random_range(0.35..0.65);
            r.blob_sigma = rng.random_range(fr.blob_sigma.0..fr.blob_sigma.1);
            r.blob_amplitude = rng.random_range(fr.blob_amplitude.0..fr.blob_amplitude.1);
            if rng.random::<f64>() >= fr.smooth_share {
                r.texture_cycles = rng.random_range(fr.texture_cycles.0..fr.texture_cycles.1);
                r.texture_amplitude = rng.random_range(fr.texture_amplitude.0..fr.texture_amplitude.1);
                r.texture_orientation = rng.random_range(fr.orientation.0..fr.orientation.1);
                r.wave_cycles = rng.random_range(fr.wave_cycles.0..fr.wave_cycles.1);
                r.wave_amplitude = rng.random_range(fr.wave_amplitude.0..fr.wave_amplitude.1);
                r.wave_orientation = rng.random_range(fr.orientation.0..fr.orientation.1);
            }
            CorpusSample {
                id: format!("s{i:04}"),
                spec: TargetSpec::Procedural(r),
                trace_seed: mix(cc.seed, 2 * i as u64 + 1),
            }
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusEntry {
    id: String,
    trace_seed: u64,
    spec: TargetSpec,
    image: String,
    hf_ratio: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusListing {
    version: u32,
    target_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<CorpusConfig>,
    /// Counts of target hf_ratio in tenths: `[0, 0.1)`, ..., `[0.9, 1]`.
    hf_ratio_histogram: Vec<usize>,
    samples: Vec<CorpusEntry>,
}

pub const CORPUS_LISTING: &str = "corpus.json";

/// Target hf_ratio of each sample at the analysis resolution.
pub fn target_hf_ratios(samples: &[CorpusSample], size: usize, pcfg: &PipelineConfig, jobs: usize) -> Result<Vec<f64>> {
    let a = pcfg.analysis_size;
    fan_out(samples, jobs, |s| Ok(hf_ratio(&resample(&s.render(size)?, a, a)?, &pcfg.hf)))
}

pub fn hf_histogram(values: &[f64]) -> Vec<usize> {
    let mut bins = vec![0; 10];
    for v in values {
        bins[((v * 10.0).floor() as usize).min(9)] += 1;
    }
    bins
}

/// Writes `corpus.json` and one `targets/<id>.raw` per sample.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    samples: &[CorpusSample],
    config: Option<CorpusConfig>,
    size: usize,
    pcfg: &PipelineConfig,
    jobs: usize,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("targets"))?;
    let images = fan_out(samples, jobs, |s| s.render(size))?;
    let a = pcfg.analysis_size;
    let mut entries = Vec::with_capacity(samples.len());
    for (s, img) in samples.iter().zip(&images) {
        let rel = format!("targets/{}.raw", s.id);
        fs::write(dir.join(&rel), encode_image(img, ImageFormat::RawF32))?;
        entries.push(CorpusEntry {
            id: s.id.clone(),
            trace_seed: s.trace_seed,
            spec: s.spec.clone(),
            image: rel,
            hf_ratio: hf_ratio(&resample(img, a, a)?, &pcfg.hf),
        });
    }
    let ratios: Vec<f64> = entries.iter().map(|e| e.hf_ratio).collect();
    let listing = CorpusListing {
        version: CORPUS_VERSION,
        target_size: size,
        config,
        hf_ratio_histogram: hf_histogram(&ratios),
        samples: entries,
    };
    fs::write(dir.join(CORPUS_LISTING), serde_json::to_string_pretty(&listing)? + "\n")?;
    Ok(())
}

/// Reads `corpus.json`. Relative file targets resolve against `dir`.
pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Vec<CorpusSample>> {
    let dir = dir.as_ref();
    let listing: CorpusListing = serde_json::from_slice(&fs::read(dir.join(CORPUS_LISTING))?)?;
    if listing.version != CORPUS_VERSION {
        return Err(Error::Format(format!("unsupported corpus version {}", listing.version)));
    }
    if listing.samples.is_empty() {
        return Err(Error::EmptyInput("corpus"));
    }
    Ok(listing
        .samples
        .into_iter()
        .map(|e| {
            let spec = match e.spec {
                TargetSpec::File { path } if path.is_relative() => TargetSpec::File { path: dir.join(path) },
                other => other,
            };
            CorpusSample { id: e.id, spec, trace_seed: e.trace_seed }
        })
        .collect())
}

/// Target image of a corpus entry written by [`write_corpus`].
pub fn corpus_image_path(dir: impl AsRef<Path>, id: &str) -> PathBuf {
    dir.as_ref().join("targets").join(format!("{id}.raw"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyScore {
    pub strategy: Strategy,
    pub ssim: f64,
}

/// Per-sample simulation result, independent of tau.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub features: FeatureVector,
    /// One entry per ladder strategy, most aggressive first.
    pub scores: Vec<StrategyScore>,
    /// SSIM of the sensitivity probe.
    pub probe_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub features: FeatureVector,
    pub label: Strategy,
    pub scores: Vec<StrategyScore>,
}

fn lookup(scores: &[StrategyScore], s: Strategy) -> Result<f64> {
    scores
        .iter()
        .find(|e| e.strategy == s)
        .map(|e| e.ssim)
        .ok_or_else(|| Error::InvalidStrategy(format!("{s} has no SSIM record")))
}

impl SampleRecord {
    pub fn ssim_of(&self, s: Strategy) -> Result<f64> {
        lookup(&self.scores, s)
    }
}

impl LabeledSample {
    pub fn ssim_of(&self, s: Strategy) -> Result<f64> {
        lookup(&self.scores, s)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tau must lie in (0, 1], got {tau}")))
    }
}

/// First strategy (in the given order) whose SSIM reaches `tau`; `none` otherwise.
pub fn select_label(scores: &[StrategyScore], tau: f64) -> Strategy {
    scores.iter().find(|e| e.ssim >= tau).map(|e| e.strategy).unwrap_or(Strategy::None)
}

/// Runs every ladder strategy and the probe on one target.
pub fn simulate_sample(target: &Image, cfg: &TraceConfig, pcfg: &PipelineConfig) -> Result<SampleRecord> {
    let order = pcfg.ordered_ladder(cfg)?;
    let mut cache = StepCache::new(target, cfg)?;
    let features = cache.features(pcfg)?;
    let (baseline, _) = cache.run(&Strategy::None)?;
    let mut score = |s: Strategy| -> Result<f64> {
        if s == Strategy::None {
            return Ok(1.0);
        }
        let (out, _) = cache.run(&s)?;
        ssim(&baseline, &out, &pcfg.ssim)
    };
    let scores = order
        .iter()
        .map(|&s| Ok(StrategyScore { strategy: s, ssim: score(s)? }))
        .collect::<Result<Vec<_>>>()?;
    let probe_ssim = match lookup(&scores, PROBE) {
        Ok(v) => v,
        Err(_) => score(PROBE)?,
    };
    Ok(SampleRecord { id: String::new(), features, scores, probe_ssim })
}

pub fn label_sample(target: &Image, cfg: &TraceConfig, pcfg: &PipelineConfig, tau: f64) -> Result<LabeledSample> {
    check_tau(tau)?;
    let rec = simulate_sample(target, cfg, pcfg)?;
    Ok(LabeledSample { id: rec.id, features: rec.features, label: select_label(&rec.scores, tau), scores: rec.scores })
}

/// Simulates every sample; output follows input order for any `jobs`.
pub fn simulate_corpus(
    samples: &[CorpusSample],
    cfg: &TraceConfig,
    pcfg: &PipelineConfig,
    jobs: usize,
) -> Result<Vec<SampleRecord>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("corpus"));
    }
    pcfg.validate(cfg)?;
    let size = cfg.final_resolution();
    fan_out(samples, jobs, |s| {
        let target = s.render(size)?;
        let mut rec = simulate_sample(&target, &cfg.with_seed(s.trace_seed), pcfg)?;
        rec.id = s.id.clone();
        Ok(rec)
    })
}

pub fn label_records(records: &[SampleRecord], tau: f64) -> Result<Vec<LabeledSample>> {
    check_tau(tau)?;
    let labeled: Vec<LabeledSample> = records
        .iter()
        .map(|r| LabeledSample {
            id: r.id.clone(),
            features: r.features,
            label: select_label(&r.scores, tau),
            scores: r.scores.clone(),
        })
        .collect();
    let mut distinct: Vec<Strategy> = labeled.iter().map(|s| s.label).collect();
    distinct.sort_by_key(|s| s.to_string());
    distinct.dedup();
    if distinct.len() < 2 {
        log::warn!("dataset has a single label ({}); classifiers need at least two", distinct[0]);
    }
    Ok(labeled)
}

pub fn build_dataset(
    samples: &[CorpusSample],
    cfg: &TraceConfig,
    pcfg: &PipelineConfig,
    tau: f64,
    jobs: usize,
) -> Result<Vec<LabeledSample>> {
    check_tau(tau)?;
    label_records(&simulate_corpus(samples, cfg, pcfg, jobs)?, tau)
}

/// `(sensitive ids, robust ids)`: sensitive iff the probe SSIM is below `tau_s`.
pub fn split_records(records: &[SampleRecord], tau_s: f64) -> Result<(Vec<String>, Vec<String>)> {
    if !(0.0..=1.0).contains(&tau_s) {
        return Err(Error::InvalidParameter(format!("tau_s must lie in [0, 1], got {tau_s}")));
    }
    let (sensitive, robust): (Vec<&SampleRecord>, Vec<&SampleRecord>) =
        records.iter().partition(|r| r.probe_ssim < tau_s);
    Ok((sensitive.into_iter().map(|r| r.id.clone()).collect(), robust.into_iter().map(|r| r.id.clone()).collect()))
}

pub fn sensitivity_split(
    samples: &[CorpusSample],
    cfg: &TraceConfig,
    pcfg: &PipelineConfig,
    tau_s: f64,
    jobs: usize,
) -> Result<(Vec<String>, Vec<String>)> {
    split_records(&simulate_corpus(samples, cfg, pcfg, jobs)?, tau_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub sample_id: String,
    pub hf_diff: f64,
    pub hf_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Strategy>,
}

pub fn write_dataset_csv(samples: &[LabeledSample], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        w.serialize(FeatureRow {
            sample_id: s.id.clone(),
            hf_diff: s.features.hf_diff,
            hf_ratio: s.features.hf_ratio,
            label: Some(s.label),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `sample_id,hf_diff,hf_ratio[,label]`.
pub fn read_feature_csv(input: impl std::io::Read) -> Result<Vec<FeatureRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if !matches!(names.as_slice(), ["sample_id", "hf_diff", "hf_ratio"] | ["sample_id", "hf_diff", "hf_ratio", "label"]) {
        return Err(Error::Format(format!("unexpected feature header {names:?}")));
    }
    let rows: Vec<FeatureRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("feature file"));
    }
    Ok(rows)
}

/// Long-format SSIM table: `sample_id,strategy,ssim`.
pub fn write_scores_csv(samples: &[LabeledSample], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", "strategy", "ssim"])?;
    for s in samples {
        for e in &s.scores {
            w.write_record([s.id.clone(), e.strategy.to_string(), e.ssim.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
