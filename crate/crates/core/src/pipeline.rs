//! The accelerated run loop: low-frequency steps, the decision step,
//! strategy selection and completion, plus corpus-level evaluation.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::{FeatureVector, Policy, TrainConfig};
use crate::error::{Error, Result};
use crate::frequency::{hf_diff, hf_ratio, HfParams};
use crate::imagecore::{resample, Image};
use crate::labeling::{label_records, simulate_corpus, CorpusSample};
use crate::metrics::{ssim, ssim_hf, HfMaskParams, SsimParams};
use crate::strategies::{default_ladder, ladder_order, CostModel, Strategy, DEFAULT_OVERHEAD};
use crate::toygen::{decode_final, Generator, Step, StepMode, StepTrace, TraceConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// 1-based step whose output drives the decision.
    pub decision_step: usize,
    pub analysis_size: usize,
    pub hf: HfParams,
    pub ssim: SsimParams,
    pub hf_mask: HfMaskParams,
    pub ladder: Vec<Strategy>,
    /// Trailing steps a strategy may alter.
    pub eligible_steps: usize,
    /// Decision cost as a fraction of the baseline cost.
    pub overhead: f64,
    /// Also run the unaccelerated tail to report SSIM.
    pub compute_baseline: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            decision_step: 9,
            analysis_size: 128,
            hf: HfParams::default(),
            ssim: SsimParams::default(),
            hf_mask: HfMaskParams::default(),
            ladder: default_ladder(),
            eligible_steps: 3,
            overhead: DEFAULT_OVERHEAD,
            compute_baseline: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, cfg: &TraceConfig) -> Result<()> {
        cfg.validate()?;
        let k = cfg.steps;
        if self.decision_step < 2 || self.decision_step >= k {
            return Err(Error::Config(format!("decision_step must satisfy 2 <= N < {k}, got {}", self.decision_step)));
        }
        if self.analysis_size < 3 {
            return Err(Error::Config(format!("analysis_size must be >= 3, got {}", self.analysis_size)));
        }
        self.hf.validate()?;
        self.ssim.validate()?;
        self.hf_mask.validate()?;
        if self.eligible_steps == 0 || self.eligible_steps > k - self.decision_step {
            return Err(Error::Config(format!(
                "eligible_steps must lie in 1..={}, got {}",
                k - self.decision_step,
                self.eligible_steps
            )));
        }
        if !self.ladder.contains(&Strategy::None) {
            return Err(Error::Config("ladder must contain none".into()));
        }
        for s in &self.ladder {
            s.validate(k)?;
            if s.span() > self.eligible_steps {
                return Err(Error::Config(format!(
                    "{s} alters {} steps, only the last {} are eligible",
                    s.span(),
                    self.eligible_steps
                )));
            }
        }
        self.cost_model(cfg)?;
        Ok(())
    }

    pub fn cost_model(&self, cfg: &TraceConfig) -> Result<CostModel> {
        CostModel::from_trace_config(cfg, self.overhead)
    }

    /// Ladder sorted from most to least aggressive.
    pub fn ordered_ladder(&self, cfg: &TraceConfig) -> Result<Vec<Strategy>> {
        ladder_order(&self.cost_model(cfg)?, &self.ladder)
    }
}

/// Features of the decision-step output `current` given the cached previous step.
pub fn decision_features(current: &Image, previous: &Image, pcfg: &PipelineConfig) -> Result<FeatureVector> {
    let a = pcfg.analysis_size;
    let diff = hf_diff(current, previous, a)?;
    let ratio = hf_ratio(&resample(current, a, a)?, &pcfg.hf);
    Ok(FeatureVector::new(diff, ratio))
}

/// Lazily evaluated steps of one generation, shared across strategies.
pub(crate) struct StepCache<'a> {
    generator: Generator<'a>,
    target: &'a Image,
    config: &'a TraceConfig,
    full: Vec<Option<Step>>,
    cond_only: Vec<Option<Step>>,
}

impl<'a> StepCache<'a> {
    pub(crate) fn new(target: &'a Image, config: &'a TraceConfig) -> Result<Self> {
        let generator = Generator::new(target, config)?;
        Ok(StepCache {
            generator,
            target,
            config,
            full: vec![None; config.steps],
            cond_only: vec![None; config.steps],
        })
    }

    pub(crate) fn get(&mut self, k: usize, mode: StepMode) -> Result<&Step> {
        let slot = match mode {
            StepMode::Full => &mut self.full[k - 1],
            StepMode::CondOnly => &mut self.cond_only[k - 1],
        };
        if slot.is_none() {
            *slot = Some(self.generator.step(k, mode)?);
        }
        Ok(slot.as_ref().expect("slot filled above"))
    }

    pub(crate) fn trace(&mut self, plan: &[StepMode]) -> Result<StepTrace> {
        let mut steps = Vec::with_capacity(plan.len());
        for (i, &mode) in plan.iter().enumerate() {
            steps.push(self.get(i + 1, mode)?.clone());
        }
        Ok(StepTrace { target: self.target.clone(), config: self.config.clone(), steps })
    }

    /// Output image and branch-pass cost of `s`.
    pub(crate) fn run(&mut self, s: &Strategy) -> Result<(Image, f64)> {
        let trace = self.trace(&s.plan(self.config.steps)?)?;
        Ok((decode_final(&trace, trace.len())?, trace.cost()))
    }

    pub(crate) fn features(&mut self, pcfg: &PipelineConfig) -> Result<FeatureVector> {
        let n = pcfg.decision_step;
        let previous = self.get(n - 1, StepMode::Full)?.combined.clone();
        let current = &self.get(n, StepMode::Full)?.combined;
        decision_features(current, &previous, pcfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub features: FeatureVector,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim_hf: Option<f64>,
    /// Executed branch passes weighted by step cost, plus decision overhead.
    pub cost: f64,
    pub speedup: f64,
}

fn check_policy(policy: &Policy, pcfg: &PipelineConfig) -> Result<()> {
    for c in policy.classes() {
        if !pcfg.ladder.contains(&c) {
            return Err(Error::Model(format!("model class {c} is not in the configured ladder")));
        }
    }
    Ok(())
}

/// Runs one accelerated generation. `override_strategy` bypasses the policy.
fn run_with(
    target: &Image,
    cfg: &TraceConfig,
    pcfg: &PipelineConfig,
    choose: impl FnOnce(&FeatureVector) -> Result<Strategy>,
) -> Result<(Image, RunReport)> {
    pcfg.validate(cfg)?;
    let cm = pcfg.cost_model(cfg)?;
    let mut cache = StepCache::new(target, cfg)?;
    let features = cache.features(pcfg)?;
    let strategy = choose(&features)?;
    if !pcfg.ladder.contains(&strategy) {
        return Err(Error::InvalidStrategy(format!("{strategy} is not in the configured ladder")));
    }
    let (output, passes) = cache.run(&strategy)?;
    let cost = passes + cm.overhead_cost();
    let (ssim_v, ssim_hf_v) = if pcfg.compute_baseline {
        let (baseline, _) = cache.run(&Strategy::None)?;
        (
            Some(ssim(&baseline, &output, &pcfg.ssim)?),
            Some(ssim_hf(&baseline, &output, &pcfg.ssim, &pcfg.hf_mask)?),
        )
    } else {
        (None, None)
    };
    let report = RunReport {
        strategy,
        features,
        ssim: ssim_v,
        ssim_hf: ssim_hf_v,
        cost,
        speedup: cm.baseline() / cost,
    };
    Ok((output, report))
}

pub fn run_skipvar(
    target: &Image,
    cfg: &TraceConfig,
    pcfg: &PipelineConfig,
    policy: &Policy,
) -> Result<(Image, RunReport)> {
    check_policy(policy, pcfg)?;
    run_with(target, cfg, pcfg, |f| policy.predict(f))
}

/// Same run loop with a fixed strategy instead of a model.
pub fn run_forced(
    target: &Image,
    cfg: &TraceConfig,
    pcfg: &PipelineConfig,
    strategy: Strategy,
) -> Result<(Image, RunReport)> {
    run_with(target, cfg, pcfg, |_| Ok(strategy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sample_id: String,
    pub strategy: Strategy,
    pub hf_diff: f64,
    pub hf_ratio: f64,
    pub ssim: f64,
    pub ssim_hf: f64,
    pub cost: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramEntry {
    pub strategy: Strategy,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub samples: usize,
    pub mean_ssim: f64,
    pub min_ssim: f64,
    pub mean_ssim_hf: f64,
    pub mean_speedup: f64,
    /// Selection counts in ladder order.
    pub histogram: Vec<HistogramEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

/// Runs `f` over `items` on `jobs` threads, keeping input order.
pub(crate) fn fan_out<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

pub fn summarize(rows: &[EvalRow], ordered_ladder: &[Strategy]) -> Result<EvalSummary> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("evaluation corpus"));
    }
    let n = rows.len() as f64;
    let mut counts: HashMap<Strategy, usize> = HashMap::new();
    for r in rows {
        *counts.entry(r.strategy).or_default() += 1;
    }
    Ok(EvalSummary {
        samples: rows.len(),
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        min_ssim: rows.iter().map(|r| r.ssim).fold(f64::INFINITY, f64::min),
        mean_ssim_hf: rows.iter().map(|r| r.ssim_hf).sum::<f64>() / n,
        mean_speedup: rows.iter().map(|r| r.speedup).sum::<f64>() / n,
        histogram: ordered_ladder
            .iter()
            .map(|s| HistogramEntry { strategy: *s, count: counts.get(s).copied().unwrap_or(0) })
            .collect(),
    })
}

/// Runs the policy on every sample with the baseline enabled.
pub fn evaluate(
    samples: &[CorpusSample],
    cfg: &TraceConfig,
    pcfg: &PipelineConfig,
    policy: &Policy,
    jobs: usize,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluation corpus"));
    }
    check_policy(policy, pcfg)?;
    let pcfg = PipelineConfig { compute_baseline: true, ..pcfg.clone() };
    let size = cfg.final_resolution();
    let rows = fan_out(samples, jobs, |s| {
        let target = s.render(size)?;
        let (_, report) = run_skipvar(&target, &cfg.with_seed(s.trace_seed), &pcfg, policy)?;
        Ok(EvalRow {
            sample_id: s.id.clone(),
            strategy: report.strategy,
            hf_diff: report.features.hf_diff,
            hf_ratio: report.features.hf_ratio,
            ssim: report.ssim.expect("baseline enabled"),
            ssim_hf: report.ssim_hf.expect("baseline enabled"),
            cost: report.cost,
            speedup: report.speedup,
        })
    })?;
    let summary = summarize(&rows, &pcfg.ordered_ladder(cfg)?)?;
    Ok(Evaluation { rows, summary })
}

pub fn write_eval_csv(rows: &[EvalRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_csv(input: impl std::io::Read) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "correlation needs two equal-length series of at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::InvalidParameter("correlation of a constant series".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// hf_ratio at the decision step (analysis resolution) and of the final
/// baseline output at full resolution, per sample.
pub fn feature_reliability(
    samples: &[CorpusSample],
    cfg: &TraceConfig,
    pcfg: &PipelineConfig,
    jobs: usize,
) -> Result<Vec<(f64, f64)>> {
    pcfg.validate(cfg)?;
    let size = cfg.final_resolution();
    fan_out(samples, jobs, |s| {
        let target = s.render(size)?;
        let c = cfg.with_seed(s.trace_seed);
        let mut cache = StepCache::new(&target, &c)?;
        let early = cache.features(pcfg)?.hf_ratio;
        let (baseline, _) = cache.run(&Strategy::None)?;
        Ok((early, hf_ratio(&baseline, &pcfg.hf)))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub tau: f64,
    pub train_samples: usize,
    pub held_out_samples: usize,
    /// Held-out samples whose recipe also appears in the training corpus.
    pub overlapping: usize,
    pub mean_ssim: f64,
    pub oracle_mean_ssim: f64,
    /// `oracle_mean_ssim - mean_ssim`.
    pub ssim_gap: f64,
    pub mean_speedup: f64,
    pub oracle_mean_speedup: f64,
    /// Fraction of held-out samples where the model picks the oracle label.
    pub agreement: f64,
}

/// Trains on `train` labeled at `tau` and scores the model on `held_out`
/// against the labeling oracle.
pub fn generalization_check(
    train: &[CorpusSample],
    held_out: &[CorpusSample],
    cfg: &TraceConfig,
    pcfg: &PipelineConfig,
    tau: f64,
    train_cfg: &TrainConfig,
    jobs: usize,
) -> Result<GeneralizationReport> {
    if train.is_empty() || held_out.is_empty() {
        return Err(Error::EmptyInput("generalization corpus"));
    }
    let overlapping = held_out.iter().filter(|h| train.iter().any(|t| t.spec == h.spec)).count();
    if overlapping > 0 {
        log::warn!("{overlapping} held-out samples share a recipe with the training corpus");
    }
    let ordered = pcfg.ordered_ladder(cfg)?;
    let cm = pcfg.cost_model(cfg)?;
    let train_labeled = label_records(&simulate_corpus(train, cfg, pcfg, jobs)?, tau)?;
    let features: Vec<FeatureVector> = train_labeled.iter().map(|s| s.features).collect();
    let labels: Vec<Strategy> = train_labeled.iter().map(|s| s.label).collect();
    let model = crate::decision::train(&features, &labels, &ordered, train_cfg)?;

    let held = label_records(&simulate_corpus(held_out, cfg, pcfg, jobs)?, tau)?;
    let n = held.len() as f64;
    let (mut ssim_sum, mut oracle_sum, mut speed_sum, mut oracle_speed, mut agree) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for s in &held {
        let pick = model.predict(&s.features)?;
        ssim_sum += s.ssim_of(pick)?;
        oracle_sum += s.ssim_of(s.label)?;
        speed_sum += cm.speedup(&pick)?;
        oracle_speed += cm.speedup(&s.label)?;
        if pick == s.label {
            agree += 1;
        }
    }
    Ok(GeneralizationReport {
        tau,
        train_samples: train.len(),
        held_out_samples: held.len(),
        overlapping,
        mean_ssim: ssim_sum / n,
        oracle_mean_ssim: oracle_sum / n,
        ssim_gap: (oracle_sum - ssim_sum) / n,
        mean_speedup: speed_sum / n,
        oracle_mean_speedup: oracle_speed / n,
        agreement: agree as f64 / n,
    })
}
