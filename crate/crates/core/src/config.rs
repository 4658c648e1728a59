//! Flat TOML run configuration shared by every subcommand.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decision::{ForestConfig, LogRegConfig, ModelKind, TrainConfig, TreeConfig};
use crate::error::{Error, Result};
use crate::frequency::HfParams;
use crate::labeling::{CorpusConfig, RecipeFamily, DEFAULT_CORPUS_SEED, DEFAULT_CORPUS_SIZE, DEFAULT_TAU_S};
use crate::metrics::{HfMaskParams, SsimParams};
use crate::pipeline::PipelineConfig;
use crate::strategies::{default_ladder, Strategy, DEFAULT_OVERHEAD};
use crate::toygen::{calibrated_weights, TraceConfig, DEFAULT_LATE_SHARE, DEFAULT_LATE_STEPS, DEFAULT_SCHEDULE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // generator
    pub steps: usize,
    pub schedule: Vec<usize>,
    pub guidance: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub late_steps: usize,
    pub late_share: f64,
    /// Explicit per-step weights; overrides `late_steps`/`late_share`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_weights: Option<Vec<f64>>,

    // pipeline
    pub decision_step: usize,
    pub analysis_size: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub dynamic_range: f64,
    pub hf_quantile: f64,
    pub ladder: Vec<Strategy>,
    pub eligible_steps: usize,
    pub overhead: f64,

    // labeling and corpus
    pub tau: f64,
    pub tau_s: f64,
    pub corpus_family: RecipeFamily,
    pub corpus_size: usize,
    /// Corpus recipes, per-sample trace seeds, the train/val split and forest bootstrap.
    pub seed: u64,

    // training
    pub model: ModelKind,
    pub two_stage: bool,
    pub train_ratio: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub forest_trees: usize,
    pub bootstrap: bool,
    /// 0 selects `max(1, floor(sqrt(d)))`.
    pub max_features: usize,

    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ssim = SsimParams::default();
        let lr = LogRegConfig::default();
        let tree = TreeConfig::default();
        let forest = ForestConfig::default();
        RunConfig {
            steps: DEFAULT_SCHEDULE.len(),
            schedule: DEFAULT_SCHEDULE.to_vec(),
            guidance: 2.0,
            alpha: 0.15,
            gamma: 0.6,
            late_steps: DEFAULT_LATE_STEPS,
            late_share: DEFAULT_LATE_SHARE,
            cost_weights: None,
            decision_step: 9,
            analysis_size: 128,
            rho: HfParams::default().rho,
            epsilon: HfParams::default().epsilon,
            ssim_window: ssim.window,
            ssim_sigma: ssim.sigma,
            ssim_k1: ssim.k1,
            ssim_k2: ssim.k2,
            dynamic_range: ssim.dynamic_range,
            hf_quantile: HfMaskParams::default().quantile,
            ladder: default_ladder(),
            eligible_steps: 3,
            overhead: DEFAULT_OVERHEAD,
            tau: 0.84,
            tau_s: DEFAULT_TAU_S,
            corpus_family: RecipeFamily::Mixed,
            corpus_size: DEFAULT_CORPUS_SIZE,
            seed: DEFAULT_CORPUS_SEED,
            model: ModelKind::Logreg,
            two_stage: false,
            train_ratio: 0.8,
            lambda: lr.lambda,
            learning_rate: lr.learning_rate,
            max_epochs: lr.max_epochs,
            tolerance: lr.tolerance,
            max_depth: tree.max_depth,
            min_leaf: tree.min_leaf,
            forest_trees: forest.trees,
            bootstrap: forest.bootstrap,
            max_features: 0,
            jobs: 1,
        }
    }
}

fn field(name: &str, e: Error) -> Error {
    let msg = match e {
        Error::Config(m) | Error::InvalidParameter(m) | Error::InvalidStrategy(m) => m,
        other => other.to_string(),
    };
    Error::Config(format!("field `{name}`: {msg}"))
}

fn require(ok: bool, name: &str, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("field `{name}`: {}", msg.into())))
    }
}

impl RunConfig {
    /// Parses a TOML document; missing keys take their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Loads `path` (if any) and applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| Error::Config(e.message().to_string()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let key = key.trim();
            let value = value.trim();
            let parsed = format!("v = {value}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()));
            table.insert(key.to_string(), parsed);
        }
        let cfg: RunConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&json)))
    }

    pub fn trace_config(&self) -> Result<TraceConfig> {
        require(self.schedule.len() == self.steps, "schedule", format!("needs {} entries", self.steps))?;
        let cost_weights = match &self.cost_weights {
            Some(w) => w.clone(),
            None => calibrated_weights(&self.schedule, self.late_steps, self.late_share)
                .map_err(|e| field("late_share", e))?,
        };
        let cfg = TraceConfig {
            steps: self.steps,
            schedule: self.schedule.clone(),
            guidance: self.guidance,
            alpha: self.alpha,
            gamma: self.gamma,
            seed: self.seed,
            cost_weights,
        };
        cfg.validate().map_err(|e| field("steps/schedule/guidance/alpha/gamma/cost_weights", e))?;
        Ok(cfg)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            decision_step: self.decision_step,
            analysis_size: self.analysis_size,
            hf: HfParams { rho: self.rho, epsilon: self.epsilon },
            ssim: SsimParams {
                window: self.ssim_window,
                sigma: self.ssim_sigma,
                k1: self.ssim_k1,
                k2: self.ssim_k2,
                dynamic_range: self.dynamic_range,
            },
            hf_mask: HfMaskParams { quantile: self.hf_quantile },
            ladder: self.ladder.clone(),
            eligible_steps: self.eligible_steps,
            overhead: self.overhead,
            compute_baseline: false,
        }
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig { family: self.corpus_family, size: self.corpus_size, seed: self.seed }
    }

    pub fn train_config(&self) -> TrainConfig {
        let tree = TreeConfig { max_depth: self.max_depth, min_leaf: self.min_leaf };
        match self.model {
            ModelKind::Logreg => TrainConfig::Logreg(LogRegConfig {
                lambda: self.lambda,
                learning_rate: self.learning_rate,
                max_epochs: self.max_epochs,
                tolerance: self.tolerance,
            }),
            ModelKind::Tree => TrainConfig::Tree(tree),
            ModelKind::Forest => TrainConfig::Forest(ForestConfig {
                trees: self.forest_trees,
                seed: self.seed,
                bootstrap: self.bootstrap,
                max_features: (self.max_features > 0).then_some(self.max_features),
                tree,
            }),
        }
    }

    /// Checks every field before any work starts.
    pub fn validate(&self) -> Result<()> {
        let trace = self.trace_config()?;
        let p = self.pipeline_config();
        p.hf.validate().map_err(|e| field("rho/epsilon", e))?;
        p.ssim.validate().map_err(|e| field("ssim_*", e))?;
        p.hf_mask.validate().map_err(|e| field("hf_quantile", e))?;
        require(
            self.decision_step >= 2 && self.decision_step < self.steps,
            "decision_step",
            format!("must satisfy 2 <= N < {}", self.steps),
        )?;
        require(self.analysis_size >= 3, "analysis_size", "must be >= 3")?;
        require(self.overhead >= 0.0 && self.overhead.is_finite(), "overhead", "must be >= 0")?;
        p.validate(&trace).map_err(|e| field("ladder/eligible_steps", e))?;
        require(self.tau > 0.0 && self.tau <= 1.0, "tau", "must lie in (0, 1]")?;
        require((0.0..=1.0).contains(&self.tau_s), "tau_s", "must lie in [0, 1]")?;
        require(self.corpus_size >= 1, "corpus_size", "must be >= 1")?;
        require(self.train_ratio > 0.0 && self.train_ratio < 1.0, "train_ratio", "must lie in (0, 1)")?;
        require(self.lambda >= 0.0, "lambda", "must be >= 0")?;
        require(self.learning_rate > 0.0, "learning_rate", "must be > 0")?;
        require(self.max_epochs >= 1, "max_epochs", "must be >= 1")?;
        require(self.tolerance >= 0.0, "tolerance", "must be >= 0")?;
        require(self.forest_trees >= 1, "forest_trees", "must be >= 1")?;
        require(self.max_features <= 2, "max_features", "must be 0 (auto), 1 or 2")?;
        require(self.jobs >= 1, "jobs", "must be >= 1")?;
        Ok(())
    }
}
