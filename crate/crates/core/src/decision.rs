//! Lightweight decision models over the two frequency features.
//!
//! Three classifiers share one contract: features are standardized with
//! the stored [`Standardizer`], classes are strategy identifiers ordered
//! from most to least aggressive, and every tie resolves toward the later
//! (less aggressive) class.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::mix;
use crate::strategies::Strategy;

pub const MODEL_VERSION: u32 = 1;
pub const NUM_FEATURES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub hf_diff: f64,
    pub hf_ratio: f64,
}

impl FeatureVector {
    pub fn new(hf_diff: f64, hf_ratio: f64) -> Self {
        FeatureVector { hf_diff, hf_ratio }
    }

    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [self.hf_diff, self.hf_ratio]
    }

    pub fn is_finite(&self) -> bool {
        self.hf_diff.is_finite() && self.hf_ratio.is_finite()
    }
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Features whose variance was zero and got `std = 1`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<usize>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer { means: vec![0.0; dim], stds: vec![1.0; dim], degenerate: Vec::new() }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform(&self, f: &FeatureVector) -> [f64; NUM_FEATURES] {
        let v = self.apply(&f.to_array());
        [v[0], v[1]]
    }
}

pub fn fit_standardizer(features: &[FeatureVector]) -> Result<Standardizer> {
    if features.is_empty() {
        return Err(Error::EmptyInput("feature set"));
    }
    let n = features.len() as f64;
    let rows: Vec<[f64; NUM_FEATURES]> = features.iter().map(FeatureVector::to_array).collect();
    let mut means = vec![0.0; NUM_FEATURES];
    let mut stds = vec![0.0; NUM_FEATURES];
    let mut degenerate = Vec::new();
    for j in 0..NUM_FEATURES {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        means[j] = mean;
        stds[j] = if var > 0.0 {
            var.sqrt()
        } else {
            degenerate.push(j);
            1.0
        };
    }
    Ok(Standardizer { means, stds, degenerate })
}

/// Seeded shuffle followed by a prefix split. Both parts are non-empty.
pub fn split_train_val<T: Clone>(data: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    if data.len() < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 samples to split, got {}", data.len())));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((ratio * data.len() as f64).round() as usize).clamp(1, data.len() - 1);
    let pick = |ix: &[usize]| ix.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logreg,
    Tree,
    Forest,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" | "lr" => Ok(ModelKind::Logreg),
            "tree" | "dt" => Ok(ModelKind::Tree),
            "forest" | "rf" => Ok(ModelKind::Forest),
            other => Err(Error::InvalidParameter(format!("unknown model kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Logreg => "logreg",
            ModelKind::Tree => "tree",
            ModelKind::Forest => "forest",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { class: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0; children always have larger indices than parents.
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Leaf class and number of splits traversed.
    pub fn evaluate(&self, x: &[f64]) -> (usize, usize) {
        let mut at = 0;
        let mut depth = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return (class, depth),
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right };
                    depth += 1;
                }
            }
        }
    }

    fn validate(&self, classes: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Model("empty tree".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                Node::Leaf { class } if class >= classes => {
                    return Err(Error::Model(format!("leaf class {class} out of range")))
                }
                Node::Split { feature, left, right, .. }
                    if feature >= NUM_FEATURES
                        || left <= i
                        || right <= i
                        || left >= self.nodes.len()
                        || right >= self.nodes.len() =>
                {
                    return Err(Error::Model(format!("malformed split at node {i}")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelParams {
    Logreg { weights: Vec<Vec<f64>>, biases: Vec<f64> },
    Tree { nodes: Vec<Node> },
    Forest { trees: Vec<Tree>, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub kind: ModelKind,
    pub classes: Vec<Strategy>,
    pub standardizer: Standardizer,
    pub params: ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig { lambda: 1e-3, learning_rate: 0.1, max_epochs: 2000, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: 4, min_leaf: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    pub seed: u64,
    pub bootstrap: bool,
    /// Features tried per split; `None` means `max(1, floor(sqrt(d)))`.
    pub max_features: Option<usize>,
    pub tree: TreeConfig,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { trees: 50, seed: 0, bootstrap: true, max_features: None, tree: TreeConfig::default() }
    }
}

/// Labeled training data in standardized coordinates.
struct Prepared {
    x: Vec<[f64; NUM_FEATURES]>,
    y: Vec<usize>,
    standardizer: Standardizer,
    classes: Vec<Strategy>,
}

fn prepare(features: &[FeatureVector], labels: &[Strategy], classes: &[Strategy]) -> Result<Prepared> {
    if features.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if features.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFiniteFeature);
    }
    if !classes.contains(&Strategy::None) {
        return Err(Error::InvalidParameter("class list must include none".into()));
    }
    let y = labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::InvalidParameter(format!("label {l} is not in the class list")))
        })
        .collect::<Result<Vec<_>>>()?;
    let standardizer = fit_standardizer(features)?;
    let x = features.iter().map(|f| standardizer.transform(f)).collect();
    Ok(Prepared { x, y, standardizer, classes: classes.to_vec() })
}

/// Index of the maximum; ties go to the highest index.
fn argmax_last(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v >= values[best] {
            best = i;
        }
    }
    best
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Softmax regression parameters: one weight row and bias per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegParams {
    pub weights: Vec<[f64; NUM_FEATURES]>,
    pub biases: Vec<f64>,
}

impl LogRegParams {
    pub fn zeros(classes: usize) -> Self {
        LogRegParams { weights: vec![[0.0; NUM_FEATURES]; classes], biases: vec![0.0; classes] }
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let scores: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect();
        softmax(&scores)
    }
}

/// Mean cross-entropy plus `lambda / 2 * |W|^2` (biases unpenalized), and its gradient.
pub fn logreg_loss_and_grad(
    params: &LogRegParams,
    x: &[[f64; NUM_FEATURES]],
    y: &[usize],
    lambda: f64,
) -> (f64, LogRegParams) {
    let n = x.len() as f64;
    let classes = params.biases.len();
    let mut grad = LogRegParams::zeros(classes);
    let mut loss = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let p = params.probabilities(xi);
        loss -= p[yi].max(f64::MIN_POSITIVE).ln();
        for (c, &pc) in p.iter().enumerate().take(classes) {
            let r = pc - if c == yi { 1.0 } else { 0.0 };
            for (g, &xj) in grad.weights[c].iter_mut().zip(xi.iter()) {
                *g += r * xj / n;
            }
            grad.biases[c] += r / n;
        }
    }
    loss /= n;
    for c in 0..classes {
        for j in 0..NUM_FEATURES {
            loss += 0.5 * lambda * params.weights[c][j].powi(2);
            grad.weights[c][j] += lambda * params.weights[c][j];
        }
    }
    (loss, grad)
}

fn distinct_labels(y: &[usize]) -> usize {
    let mut seen: Vec<usize> = y.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

pub fn train_logreg(
    features: &[FeatureVector],
    labels: &[Strategy],
    classes: &[Strategy],
    cfg: &LogRegConfig,
) -> Result<TrainedModel> {
    let data = prepare(features, labels, classes)?;
    if distinct_labels(&data.y) < 2 {
        return Err(Error::SingleClass(labels[0].to_string()));
    }
    let mut params = LogRegParams::zeros(data.classes.len());
    for _ in 0..cfg.max_epochs {
        let (_, grad) = logreg_loss_and_grad(&params, &data.x, &data.y, cfg.lambda);
        let norm = grad
            .weights
            .iter()
            .flatten()
            .chain(&grad.biases)
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if norm < cfg.tolerance {
            break;
        }
        for c in 0..params.biases.len() {
            for j in 0..NUM_FEATURES {
                params.weights[c][j] -= cfg.learning_rate * grad.weights[c][j];
            }
            params.biases[c] -= cfg.learning_rate * grad.biases[c];
        }
    }
    Ok(TrainedModel {
        version: MODEL_VERSION,
        kind: ModelKind::Logreg,
        classes: data.classes,
        standardizer: data.standardizer,
        params: ModelParams::Logreg {
            weights: params.weights.iter().map(|w| w.to_vec()).collect(),
            biases: params.biases,
        },
    })
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

/// Majority class; ties go to the less aggressive (higher-index) class.
fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c >= counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Size-weighted child Gini impurity.
    pub impurity: f64,
}

/// Lowest weighted-Gini split over midpoints of distinct feature values.
/// Earlier features and lower thresholds win ties. Each child must keep
/// at least `min_leaf` samples.
pub fn best_split(
    x: &[[f64; NUM_FEATURES]],
    y: &[usize],
    rows: &[usize],
    features: &[usize],
    classes: usize,
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = rows.len();
    let mut best: Option<SplitChoice> = None;
    let mut total = vec![0usize; classes];
    for &r in rows {
        total[y[r]] += 1;
    }
    for &f in features {
        let mut sorted = rows.to_vec();
        sorted.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left = vec![0usize; classes];
        for i in 0..n.saturating_sub(1) {
            left[y[sorted[i]]] += 1;
            let (a, b) = (x[sorted[i]][f], x[sorted[i + 1]][f]);
            if a == b {
                continue;
            }
            let n_left = i + 1;
            let n_right = n - n_left;
            if n_left < min_leaf.max(1) || n_right < min_leaf.max(1) {
                continue;
            }
            let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let impurity = (n_left as f64 * gini(&left, n_left) + n_right as f64 * gini(&right, n_right)) / n as f64;
            let threshold = a + (b - a) / 2.0;
            if best.is_none_or(|s| impurity < s.impurity - 1e-12) {
                best = Some(SplitChoice { feature: f, threshold, impurity });
            }
        }
    }
    best
}

struct TreeBuilder<'a> {
    x: &'a [[f64; NUM_FEATURES]],
    y: &'a [usize],
    classes: usize,
    cfg: TreeConfig,
    nodes: Vec<Node>,
    feature_sampler: Option<(ChaCha8Rng, usize)>,
}

impl TreeBuilder<'_> {
    fn candidate_features(&mut self) -> Vec<usize> {
        let mut all: Vec<usize> = (0..NUM_FEATURES).collect();
        match &mut self.feature_sampler {
            None => all,
            Some((rng, m)) => {
                all.shuffle(rng);
                let mut pick = all[..(*m).min(NUM_FEATURES)].to_vec();
                pick.sort_unstable();
                pick
            }
        }
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let mut counts = vec![0usize; self.classes];
        for &r in rows {
            counts[self.y[r]] += 1;
        }
        self.nodes.push(Node::Leaf { class: majority(&counts) });
        let parent = gini(&counts, rows.len());
        if depth >= self.cfg.max_depth || parent == 0.0 {
            return id;
        }
        let features = self.candidate_features();
        let Some(split) = best_split(self.x, self.y, rows, &features, self.classes, self.cfg.min_leaf) else {
            return id;
        };
        if split.impurity >= parent - 1e-12 {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

fn build_tree(
    x: &[[f64; NUM_FEATURES]],
    y: &[usize],
    rows: &[usize],
    classes: usize,
    cfg: TreeConfig,
    feature_sampler: Option<(ChaCha8Rng, usize)>,
) -> Tree {
    let mut b = TreeBuilder { x, y, classes, cfg, nodes: Vec::new(), feature_sampler };
    b.grow(rows, 0);
    Tree { nodes: b.nodes }
}

/// CART with Gini impurity.
pub fn train_tree(
    features: &[FeatureVector],
    labels: &[Strategy],
    classes: &[Strategy],
    cfg: &TreeConfig,
) -> Result<TrainedModel> {
    let data = prepare(features, labels, classes)?;
    let rows: Vec<usize> = (0..data.x.len()).collect();
    let tree = build_tree(&data.x, &data.y, &rows, data.classes.len(), *cfg, None);
    Ok(TrainedModel {
        version: MODEL_VERSION,
        kind: ModelKind::Tree,
        classes: data.classes,
        standardizer: data.standardizer,
        params: ModelParams::Tree { nodes: tree.nodes },
    })
}

/// Bagged CART trees with per-split feature subsampling.
pub fn train_forest(
    features: &[FeatureVector],
    labels: &[Strategy],
    classes: &[Strategy],
    cfg: &ForestConfig,
) -> Result<TrainedModel> {
    if cfg.trees == 0 {
        return Err(Error::InvalidParameter("forest needs at least one tree".into()));
    }
    let data = prepare(features, labels, classes)?;
    let n = data.x.len();
    let m = cfg
        .max_features
        .unwrap_or_else(|| ((NUM_FEATURES as f64).sqrt().floor() as usize).max(1))
        .clamp(1, NUM_FEATURES);
    let trees = (0..cfg.trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, t as u64));
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let sampler = (m < NUM_FEATURES).then(|| (ChaCha8Rng::seed_from_u64(rng.random()), m));
            build_tree(&data.x, &data.y, &rows, data.classes.len(), cfg.tree, sampler)
        })
        .collect();
    Ok(TrainedModel {
        version: MODEL_VERSION,
        kind: ModelKind::Forest,
        classes: data.classes,
        standardizer: data.standardizer,
        params: ModelParams::Forest { trees, seed: cfg.seed },
    })
}

impl TrainedModel {
    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Model(format!("unsupported model version {}", self.version)));
        }
        if self.classes.is_empty() || !self.classes.contains(&Strategy::None) {
            return Err(Error::Model("class list must be non-empty and include none".into()));
        }
        let st = &self.standardizer;
        if st.means.len() != NUM_FEATURES || st.stds.len() != NUM_FEATURES || st.stds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Model("malformed standardizer".into()));
        }
        let k = self.classes.len();
        match (&self.kind, &self.params) {
            (ModelKind::Logreg, ModelParams::Logreg { weights, biases }) => {
                if weights.len() != k || biases.len() != k || weights.iter().any(|w| w.len() != NUM_FEATURES) {
                    return Err(Error::Model("logreg parameter shape mismatch".into()));
                }
            }
            (ModelKind::Tree, ModelParams::Tree { nodes }) => Tree { nodes: nodes.clone() }.validate(k)?,
            (ModelKind::Forest, ModelParams::Forest { trees, .. }) => {
                if trees.is_empty() {
                    return Err(Error::Model("forest has no trees".into()));
                }
                for t in trees {
                    t.validate(k)?;
                }
            }
            _ => return Err(Error::Model(format!("parameters do not match kind {}", self.kind))),
        }
        Ok(())
    }

    /// Class probabilities (logreg) or vote shares (tree, forest).
    pub fn scores(&self, f: &FeatureVector) -> Result<Vec<f64>> {
        if !f.is_finite() {
            return Err(Error::NonFiniteFeature);
        }
        let x = self.standardizer.transform(f);
        Ok(self.scores_standardized(&x))
    }

    fn scores_standardized(&self, x: &[f64; NUM_FEATURES]) -> Vec<f64> {
        let k = self.classes.len();
        match &self.params {
            ModelParams::Logreg { weights, biases } => {
                let params = LogRegParams {
                    weights: weights.iter().map(|w| [w[0], w[1]]).collect(),
                    biases: biases.clone(),
                };
                params.probabilities(x)
            }
            ModelParams::Tree { nodes } => {
                let mut s = vec![0.0; k];
                s[Tree { nodes: nodes.clone() }.evaluate(x).0] = 1.0;
                s
            }
            ModelParams::Forest { trees, .. } => {
                let mut votes = vec![0.0; k];
                for t in trees {
                    votes[t.evaluate(x).0] += 1.0;
                }
                let total = trees.len() as f64;
                votes.iter_mut().for_each(|v| *v /= total);
                votes
            }
        }
    }

    pub fn predict(&self, f: &FeatureVector) -> Result<Strategy> {
        let scores = self.scores(f)?;
        Ok(self.classes[argmax_last(&scores)])
    }

    /// Prediction on features that are already standardized.
    pub fn predict_standardized(&self, x: &[f64; NUM_FEATURES]) -> Strategy {
        self.classes[argmax_last(&self.scores_standardized(x))]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => return Err(Error::Model(format!("unsupported model version {v}"))),
            None => return Err(Error::Model("missing version field".into())),
        }
        let model: TrainedModel = serde_json::from_value(value).map_err(|e| Error::Model(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }
}

pub fn predict(m: &TrainedModel, f: &FeatureVector) -> Result<Strategy> {
    m.predict(f)
}

pub fn save_model(m: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, m.to_json()?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    TrainedModel::from_json(&fs::read_to_string(path)?)
}

/// Strategy selector: one multiclass model, or separate skip and
/// replacement models queried in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Policy {
    Single { model: TrainedModel },
    TwoStage { skip: TrainedModel, uncond: TrainedModel },
}

impl Policy {
    pub fn predict(&self, f: &FeatureVector) -> Result<Strategy> {
        match self {
            Policy::Single { model } => model.predict(f),
            Policy::TwoStage { skip, uncond } => match skip.predict(f)? {
                Strategy::None => uncond.predict(f),
                s => Ok(s),
            },
        }
    }

    /// Every strategy the policy can emit.
    pub fn classes(&self) -> Vec<Strategy> {
        match self {
            Policy::Single { model } => model.classes.clone(),
            Policy::TwoStage { skip, uncond } => {
                let mut all = skip.classes.clone();
                for c in &uncond.classes {
                    if !all.contains(c) {
                        all.push(*c);
                    }
                }
                all
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            Policy::Single { model } => model.to_json(),
            Policy::TwoStage { .. } => {
                let mut v = serde_json::to_value(self)?;
                v["version"] = MODEL_VERSION.into();
                Ok(serde_json::to_string_pretty(&v)? + "\n")
            }
        }
    }

    /// Accepts a bare model file or a two-stage policy file.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("mode").is_none() {
            return Ok(Policy::Single { model: TrainedModel::from_json(text)? });
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            _ => return Err(Error::Model("missing or unsupported policy version".into())),
        }
        let policy: Policy = serde_json::from_value(value).map_err(|e| Error::Model(e.to_string()))?;
        match &policy {
            Policy::Single { model } => model.validate()?,
            Policy::TwoStage { skip, uncond } => {
                skip.validate()?;
                uncond.validate()?;
            }
        }
        Ok(policy)
    }
}

impl From<TrainedModel> for Policy {
    fn from(model: TrainedModel) -> Self {
        Policy::Single { model }
    }
}

pub fn save_policy(p: &Policy, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, p.to_json()?)?;
    Ok(())
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<Policy> {
    Policy::from_json(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainConfig {
    Logreg(LogRegConfig),
    Tree(TreeConfig),
    Forest(ForestConfig),
}

impl TrainConfig {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Logreg => TrainConfig::Logreg(LogRegConfig::default()),
            ModelKind::Tree => TrainConfig::Tree(TreeConfig::default()),
            ModelKind::Forest => TrainConfig::Forest(ForestConfig::default()),
        }
    }
}

pub fn train(
    features: &[FeatureVector],
    labels: &[Strategy],
    classes: &[Strategy],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    match cfg {
        TrainConfig::Logreg(c) => train_logreg(features, labels, classes, c),
        TrainConfig::Tree(c) => train_tree(features, labels, classes, c),
        TrainConfig::Forest(c) => train_forest(features, labels, classes, c),
    }
}

/// Fraction of rows where the model reproduces the label.
pub fn accuracy(m: &TrainedModel, features: &[FeatureVector], labels: &[Strategy]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let mut hits = 0;
    for (f, l) in features.iter().zip(labels) {
        if m.predict(f)? == *l {
            hits += 1;
        }
    }
    Ok(hits as f64 / features.len() as f64)
}
