//! `skipvar` command-line interface: corpus, label, train, run, evaluate.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::decision::{
    accuracy, split_train_val, train, FeatureVector, ModelKind, Policy, TrainConfig,
};
use crate::error::{Error, Result};
use crate::imagecore::{encode_image, load_image, Image, ImageFormat};
use crate::labeling::{
    build_corpus, read_corpus, read_feature_csv, sensitivity_split, simulate_corpus, label_records, write_corpus,
    write_dataset_csv, write_scores_csv, CorpusSample, FeatureRow,
};
use crate::pipeline::{evaluate, run_forced, run_skipvar, write_eval_csv, EvalSummary, RunReport};
use crate::strategies::Strategy;
use crate::toygen::generate_trace;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "skipvar", version, about = "Frequency-aware step skipping for coarse-to-fine generators")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set rho=0.4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Materialize the procedural corpus (targets + corpus.json).
    Corpus {
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate every ladder strategy and write features with labels.
    Label {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a decision model on an 80/20 split and report accuracy.
    Train {
        /// CSV with `sample_id,hf_diff,hf_ratio[,label]`.
        #[arg(long)]
        features: PathBuf,
        /// Separate label CSV, matched by sample_id.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// logreg, tree or forest; defaults to the config.
        #[arg(long)]
        kind: Option<ModelKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accelerated generation of one target.
    Run {
        #[arg(long, required_unless_present = "force_strategy")]
        model: Option<PathBuf>,
        /// Image file at the final resolution (PGM/PPM or rawf32).
        #[arg(long, conflicts_with_all = ["corpus", "sample"])]
        target: Option<PathBuf>,
        #[arg(long, requires = "sample")]
        corpus: Option<PathBuf>,
        #[arg(long, requires = "corpus")]
        sample: Option<String>,
        /// Bypass the model.
        #[arg(long)]
        force_strategy: Option<Strategy>,
        /// Also run the unaccelerated tail and report SSIM.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-sample evaluation CSV and summary for one or more models.
    Evaluate {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write sensitive.txt / robust.txt at `tau_s`.
        #[arg(long)]
        split_sensitivity: bool,
    },
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    config: &'a RunConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Collects output files, then writes `manifest.json` alongside them.
struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf(), written: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
        self.record(name);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write(name, serde_json::to_string_pretty(value)? + "\n")
    }

    fn record(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }

    fn finish(mut self, command: &str, cfg: &RunConfig, inputs: &[&Path]) -> Result<()> {
        self.written.sort();
        let inputs = inputs
            .iter()
            .filter(|p| p.is_file())
            .map(|p| Ok(FileDigest { path: p.display().to_string(), sha256: sha256_file(p)? }))
            .collect::<Result<Vec<_>>>()?;
        let outputs = self
            .written
            .iter()
            .map(|name| Ok(FileDigest { path: name.clone(), sha256: sha256_file(&self.root.join(name))? }))
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest { command, config_hash: cfg.hash()?, config: cfg, inputs, outputs };
        fs::write(self.root.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = common.tau {
        overrides.push(format!("tau={t}"));
    }
    if let Some(j) = common.jobs {
        overrides.push(format!("jobs={j}"));
    }
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn cmd_corpus(cfg: &RunConfig, out: &Path) -> Result<()> {
    let trace = cfg.trace_config()?;
    let pcfg = cfg.pipeline_config();
    let cc = cfg.corpus_config();
    let samples = build_corpus(&cc)?;
    write_corpus(out, &samples, Some(cc), trace.final_resolution(), &pcfg, cfg.jobs)?;
    let mut dir = OutputDir::create(out)?;
    dir.record(crate::labeling::CORPUS_LISTING);
    for s in &samples {
        dir.record(&format!("targets/{}.raw", s.id));
    }
    dir.finish("corpus", cfg, &[])?;
    log::info!("wrote {} targets to {}", samples.len(), out.display());
    Ok(())
}

fn cmd_label(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<()> {
    let samples = read_corpus(corpus)?;
    let trace = cfg.trace_config()?;
    let pcfg = cfg.pipeline_config();
    let records = simulate_corpus(&samples, &trace, &pcfg, cfg.jobs)?;
    let labeled = label_records(&records, cfg.tau)?;
    let mut dir = OutputDir::create(out)?;
    let mut buf = Vec::new();
    write_dataset_csv(&labeled, &mut buf)?;
    dir.write("labels.csv", &buf)?;
    let mut buf = Vec::new();
    write_scores_csv(&labeled, &mut buf)?;
    dir.write("scores.csv", &buf)?;
    dir.finish("label", cfg, &[&corpus.join(crate::labeling::CORPUS_LISTING)])
}

fn read_training_rows(features: &Path, labels: Option<&Path>) -> Result<(Vec<FeatureVector>, Vec<Strategy>)> {
    let rows = read_feature_csv(fs::File::open(features)?)?;
    let label_rows: Vec<FeatureRow> = match labels {
        Some(p) => read_feature_csv(fs::File::open(p)?)?,
        None => rows.clone(),
    };
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for r in &rows {
        let label = label_rows
            .iter()
            .find(|l| l.sample_id == r.sample_id)
            .and_then(|l| l.label)
            .ok_or_else(|| Error::Format(format!("no label for sample {}", r.sample_id)))?;
        x.push(FeatureVector::new(r.hf_diff, r.hf_ratio));
        y.push(label);
    }
    Ok((x, y))
}

#[derive(Debug, Serialize)]
struct TrainReport {
    kind: ModelKind,
    two_stage: bool,
    train_samples: usize,
    val_samples: usize,
    train_accuracy: f64,
    val_accuracy: f64,
    label_counts: Vec<(Strategy, usize)>,
}

fn policy_accuracy(p: &Policy, x: &[FeatureVector], y: &[Strategy]) -> Result<f64> {
    if let Policy::Single { model } = p {
        return accuracy(model, x, y);
    }
    let mut hits = 0;
    for (f, l) in x.iter().zip(y) {
        if p.predict(f)? == *l {
            hits += 1;
        }
    }
    Ok(hits as f64 / x.len().max(1) as f64)
}

/// Skip model over skip classes, then a replacement model on the samples it passes on.
fn train_two_stage(x: &[FeatureVector], y: &[Strategy], ladder: &[Strategy], tc: &TrainConfig) -> Result<Policy> {
    let skip_classes: Vec<Strategy> =
        ladder.iter().copied().filter(|s| s.is_skip() || *s == Strategy::None).collect();
    let skip_labels: Vec<Strategy> = y.iter().map(|l| if l.is_skip() { *l } else { Strategy::None }).collect();
    let skip = train(x, &skip_labels, &skip_classes, tc)?;
    let uncond_classes: Vec<Strategy> =
        ladder.iter().copied().filter(|s| s.is_uncond() || *s == Strategy::None).collect();
    let (ux, uy): (Vec<FeatureVector>, Vec<Strategy>) =
        x.iter().zip(y).filter(|(_, l)| !l.is_skip()).map(|(f, l)| (*f, *l)).unzip();
    let uy: Vec<Strategy> = uy.into_iter().map(|l| if l.is_uncond() { l } else { Strategy::None }).collect();
    let uncond = train(&ux, &uy, &uncond_classes, tc)?;
    Ok(Policy::TwoStage { skip, uncond })
}

fn cmd_train(
    cfg: &RunConfig,
    features: &Path,
    labels: Option<&Path>,
    kind: Option<ModelKind>,
    out: &Path,
) -> Result<()> {
    let cfg = RunConfig { model: kind.unwrap_or(cfg.model), ..cfg.clone() };
    let (x, y) = read_training_rows(features, labels)?;
    let ladder = cfg.pipeline_config().ordered_ladder(&cfg.trace_config()?)?;
    let indices: Vec<usize> = (0..x.len()).collect();
    let (tr, va) = split_train_val(&indices, cfg.train_ratio, cfg.seed)?;
    let pick = |ix: &[usize]| -> (Vec<FeatureVector>, Vec<Strategy>) { ix.iter().map(|&i| (x[i], y[i])).unzip() };
    let (tx, ty) = pick(&tr);
    let (vx, vy) = pick(&va);
    let tc = cfg.train_config();
    let policy: Policy = if cfg.two_stage {
        train_two_stage(&tx, &ty, &ladder, &tc)?
    } else {
        train(&tx, &ty, &ladder, &tc)?.into()
    };
    let report = TrainReport {
        kind: cfg.model,
        two_stage: cfg.two_stage,
        train_samples: tx.len(),
        val_samples: vx.len(),
        train_accuracy: policy_accuracy(&policy, &tx, &ty)?,
        val_accuracy: policy_accuracy(&policy, &vx, &vy)?,
        label_counts: ladder.iter().map(|s| (*s, y.iter().filter(|l| *l == s).count())).collect(),
    };
    log::info!("train accuracy {:.4}, validation accuracy {:.4}", report.train_accuracy, report.val_accuracy);
    let mut dir = OutputDir::create(out)?;
    dir.write("model.json", policy.to_json()?)?;
    dir.write_json("train_report.json", &report)?;
    let mut inputs = vec![features];
    inputs.extend(labels);
    dir.finish("train", &cfg, &inputs)
}

#[derive(Debug, Serialize)]
struct RunOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    sample_id: Option<String>,
    trace_seed: u64,
    #[serde(flatten)]
    report: RunReport,
    output_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_sha256: Option<String>,
}

fn raw_digest(img: &Image) -> String {
    hex::encode(Sha256::digest(encode_image(img, ImageFormat::RawF32)))
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    cfg: &RunConfig,
    model: Option<&Path>,
    target: Option<&Path>,
    corpus: Option<&Path>,
    sample: Option<&str>,
    force: Option<Strategy>,
    baseline: bool,
    out: &Path,
) -> Result<()> {
    let trace_cfg = cfg.trace_config()?;
    let size = trace_cfg.final_resolution();
    let (image, trace_seed, sample_id, input): (Image, u64, Option<String>, PathBuf) = match (target, corpus, sample) {
        (Some(path), _, _) => (load_image(path)?.into_gray(), cfg.seed, None, path.to_path_buf()),
        (None, Some(dir), Some(id)) => {
            let samples = read_corpus(dir)?;
            let s: &CorpusSample = samples
                .iter()
                .find(|s| s.id == id)
                .ok_or_else(|| Error::Format(format!("sample {id} not found in {}", dir.display())))?;
            (s.render(size)?, s.trace_seed, Some(s.id.clone()), dir.join(crate::labeling::CORPUS_LISTING))
        }
        _ => return Err(Error::Config("pass --target or --corpus with --sample".into())),
    };
    let tc = trace_cfg.with_seed(trace_seed);
    let pcfg = crate::pipeline::PipelineConfig { compute_baseline: baseline, ..cfg.pipeline_config() };
    let (output, report) = match (force, model) {
        (Some(s), _) => run_forced(&image, &tc, &pcfg, s)?,
        (None, Some(m)) => run_skipvar(&image, &tc, &pcfg, &crate::decision::load_policy(m)?)?,
        (None, None) => return Err(Error::Config("pass --model or --force-strategy".into())),
    };
    let baseline_sha256 = if baseline {
        Some(raw_digest(&generate_trace(&image, &tc)?.last().expect("non-empty trace").combined))
    } else {
        None
    };
    let mut dir = OutputDir::create(out)?;
    dir.write("output.raw", encode_image(&output, ImageFormat::RawF32))?;
    dir.write("output.pgm", encode_image(&output, ImageFormat::Pgm8))?;
    dir.write_json(
        "report.json",
        &RunOutput { sample_id, trace_seed, report, output_sha256: raw_digest(&output), baseline_sha256 },
    )?;
    let mut inputs = vec![input.as_path()];
    inputs.extend(model);
    dir.finish("run", cfg, &inputs)
}

#[derive(Debug, Serialize)]
struct SummaryOutput<'a> {
    model: String,
    tau: f64,
    #[serde(flatten)]
    summary: &'a EvalSummary,
}

fn model_names(models: &[PathBuf]) -> Vec<String> {
    if models.len() == 1 {
        return vec![String::new()];
    }
    let stems: Vec<String> = models
        .iter()
        .map(|m| {
            let stem = m.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if stem == "model" {
                // model.json inside a per-run directory: name it after the directory
                m.parent()
                    .and_then(|p| p.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or(stem)
            } else {
                stem
            }
        })
        .collect();
    stems
        .iter()
        .enumerate()
        .map(|(i, s)| if stems.iter().filter(|t| *t == s).count() > 1 { format!("{s}_{i}") } else { s.clone() })
        .collect()
}

fn cmd_evaluate(cfg: &RunConfig, models: &[PathBuf], corpus: &Path, out: &Path, split: bool) -> Result<()> {
    let samples = read_corpus(corpus)?;
    let trace = cfg.trace_config()?;
    let pcfg = cfg.pipeline_config();
    let mut dir = OutputDir::create(out)?;
    let mut sweep = Vec::new();
    for (path, name) in models.iter().zip(model_names(models)) {
        let policy = crate::decision::load_policy(path)?;
        let eval = evaluate(&samples, &trace, &pcfg, &policy, cfg.jobs)?;
        let suffix = if name.is_empty() { String::new() } else { format!("_{name}") };
        let mut buf = Vec::new();
        write_eval_csv(&eval.rows, &mut buf)?;
        dir.write(&format!("eval{suffix}.csv"), &buf)?;
        let tau = model_tau(path).unwrap_or(cfg.tau);
        let summary = SummaryOutput { model: path.display().to_string(), tau, summary: &eval.summary };
        dir.write_json(&format!("summary{suffix}.json"), &summary)?;
        sweep.push(serde_json::to_value(&summary)?);
    }
    if models.len() > 1 {
        dir.write_json("sweep.json", &sweep)?;
    }
    if split {
        let (sensitive, robust) = sensitivity_split(&samples, &trace, &pcfg, cfg.tau_s, cfg.jobs)?;
        let lines = |ids: &[String]| ids.iter().map(|i| format!("{i}\n")).collect::<String>();
        dir.write("sensitive.txt", lines(&sensitive))?;
        dir.write("robust.txt", lines(&robust))?;
    }
    let mut inputs: Vec<&Path> = models.iter().map(PathBuf::as_path).collect();
    let listing = corpus.join(crate::labeling::CORPUS_LISTING);
    inputs.push(&listing);
    dir.finish("evaluate", cfg, &inputs)
}

/// Tau recorded in the manifest next to a trained model, if any.
fn model_tau(model: &Path) -> Option<f64> {
    let manifest = model.parent()?.join("manifest.json");
    let value: serde_json::Value = serde_json::from_slice(&fs::read(manifest).ok()?).ok()?;
    value.get("config")?.get("tau")?.as_f64()
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidStrategy(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    match &cli.command {
        Command::Corpus { out } => cmd_corpus(&cfg, out),
        Command::Label { corpus, out } => cmd_label(&cfg, corpus, out),
        Command::Train { features, labels, kind, out } => cmd_train(&cfg, features, labels.as_deref(), *kind, out),
        Command::Run { model, target, corpus, sample, force_strategy, baseline, out } => cmd_run(
            &cfg,
            model.as_deref(),
            target.as_deref(),
            corpus.as_deref(),
            sample.as_deref(),
            *force_strategy,
            *baseline,
            out,
        ),
        Command::Evaluate { model, corpus, out, split_sensitivity } => {
            cmd_evaluate(&cfg, model, corpus, out, *split_sensitivity)
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
