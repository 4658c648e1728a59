//! Acceleration strategies, their effect on a trace, and cost accounting.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::toygen::{decode_final, Generator, StepMode, StepTrace, TraceConfig};

pub const DEFAULT_OVERHEAD: f64 = 0.005;

/// Action applied to the tail of a generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    None,
    /// Drop the last `n` steps and upsample the last emitted image.
    Skip(usize),
    /// Replace the unconditional branch by the conditional one on the last `n` steps.
    UncondReplace(usize),
    /// Skip the last `skip` steps and replace the unconditional branch on
    /// the `uncond` steps right before them.
    Hybrid { skip: usize, uncond: usize },
}

impl Strategy {
    /// Number of trailing steps whose execution differs from the baseline.
    pub fn span(&self) -> usize {
        match *self {
            Strategy::None => 0,
            Strategy::Skip(n) | Strategy::UncondReplace(n) => n,
            Strategy::Hybrid { skip, uncond } => skip + uncond,
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        let ok = match *self {
            Strategy::None => true,
            Strategy::Skip(n) => n >= 1 && n < steps,
            Strategy::UncondReplace(n) => n >= 1 && n <= steps,
            Strategy::Hybrid { skip, uncond } => skip >= 1 && uncond >= 1 && skip + uncond < steps,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidStrategy(format!("{self} is out of bounds for {steps} steps")))
        }
    }

    /// Per-step modes for the steps that actually run.
    pub fn plan(&self, steps: usize) -> Result<Vec<StepMode>> {
        self.validate(steps)?;
        let (skip, replace) = match *self {
            Strategy::None => (0, 0),
            Strategy::Skip(n) => (n, 0),
            Strategy::UncondReplace(n) => (0, n),
            Strategy::Hybrid { skip, uncond } => (skip, uncond),
        };
        let run = steps - skip;
        Ok((1..=run)
            .map(|k| if k + replace > run { StepMode::CondOnly } else { StepMode::Full })
            .collect())
    }

    fn family_rank(&self) -> u8 {
        match self {
            Strategy::Skip(_) => 0,
            Strategy::Hybrid { .. } => 1,
            Strategy::UncondReplace(_) => 2,
            Strategy::None => 3,
        }
    }

    pub fn is_skip(&self) -> bool {
        matches!(self, Strategy::Skip(_))
    }

    pub fn is_uncond(&self) -> bool {
        matches!(self, Strategy::UncondReplace(_))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::None => write!(f, "none"),
            Strategy::Skip(n) => write!(f, "skip_{n}"),
            Strategy::UncondReplace(n) => write!(f, "uncond_{n}"),
            Strategy::Hybrid { skip, uncond } => write!(f, "hybrid_{skip}_{uncond}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidStrategy(format!("cannot parse {s:?}"));
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let parts: Vec<&str> = s.split('_').collect();
        match parts.as_slice() {
            ["none"] => Ok(Strategy::None),
            ["skip", n] => Ok(Strategy::Skip(num(n)?)),
            ["uncond", n] => Ok(Strategy::UncondReplace(num(n)?)),
            ["hybrid", a, b] => Ok(Strategy::Hybrid { skip: num(a)?, uncond: num(b)? }),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// skip_3..1, uncond_3..1, none.
pub fn default_ladder() -> Vec<Strategy> {
    vec![
        Strategy::Skip(3),
        Strategy::Skip(2),
        Strategy::Skip(1),
        Strategy::UncondReplace(3),
        Strategy::UncondReplace(2),
        Strategy::UncondReplace(1),
        Strategy::None,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub weights: Vec<f64>,
    pub overhead: f64,
}

impl CostModel {
    pub fn new(weights: Vec<f64>, overhead: f64) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("cost weights must sum to 1, got {total}")));
        }
        if !(overhead >= 0.0 && overhead.is_finite()) {
            return Err(Error::InvalidParameter(format!("overhead must be >= 0, got {overhead}")));
        }
        Ok(CostModel { weights, overhead })
    }

    pub fn from_trace_config(cfg: &TraceConfig, overhead: f64) -> Result<Self> {
        CostModel::new(cfg.cost_weights.clone(), overhead)
    }

    pub fn steps(&self) -> usize {
        self.weights.len()
    }

    pub fn baseline(&self) -> f64 {
        2.0 * self.weights.iter().sum::<f64>()
    }

    /// Branch-pass cost of running `s`, excluding decision overhead.
    pub fn strategy_cost(&self, s: &Strategy) -> Result<f64> {
        let plan = s.plan(self.steps())?;
        Ok(plan
            .iter()
            .zip(&self.weights)
            .map(|(mode, w)| match mode {
                StepMode::Full => 2.0 * w,
                StepMode::CondOnly => *w,
            })
            .sum())
    }

    pub fn overhead_cost(&self) -> f64 {
        self.overhead * self.baseline()
    }

    pub fn speedup(&self, s: &Strategy) -> Result<f64> {
        let base = self.baseline();
        Ok(base / (self.strategy_cost(s)? + self.overhead_cost()))
    }
}

pub fn speedup(cm: &CostModel, s: &Strategy) -> Result<f64> {
    cm.speedup(s)
}

/// Most aggressive first: descending modeled speedup; ties prefer skip,
/// then larger `n`; `none` always last.
pub fn ladder_order(cm: &CostModel, ladder: &[Strategy]) -> Result<Vec<Strategy>> {
    if ladder.is_empty() {
        return Err(Error::EmptyInput("strategy ladder"));
    }
    if !ladder.contains(&Strategy::None) {
        return Err(Error::InvalidStrategy("ladder must contain none".into()));
    }
    let mut keyed = ladder
        .iter()
        .map(|s| Ok((*s, cm.speedup(s)?)))
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by(|(a, sa), (b, sb)| {
        let none_last = (*a == Strategy::None).cmp(&(*b == Strategy::None));
        if none_last != Ordering::Equal {
            return none_last;
        }
        let by_speed = if (sa - sb).abs() <= 1e-12 { Ordering::Equal } else { sb.total_cmp(sa) };
        by_speed
            .then(a.family_rank().cmp(&b.family_rank()))
            .then(b.span().cmp(&a.span()))
    });
    let mut out: Vec<Strategy> = Vec::with_capacity(keyed.len());
    for (s, _) in keyed {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    Ok(out)
}

/// Output and executed steps of a strategy run.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub output: Image,
    pub cost: f64,
    pub trace: StepTrace,
}

/// Runs `s` from scratch. `cost` excludes decision overhead.
pub fn run_strategy(target: &Image, cfg: &TraceConfig, s: &Strategy) -> Result<StrategyRun> {
    let generator = Generator::new(target, cfg)?;
    let plan = s.plan(cfg.steps)?;
    let trace = generator.run(&plan)?;
    let output = finish(&trace)?;
    Ok(StrategyRun { output, cost: trace.cost(), trace })
}

/// Final image for a (possibly truncated) trace.
pub(crate) fn finish(trace: &StepTrace) -> Result<Image> {
    decode_final(trace, trace.len())
}

pub fn apply_strategy(target: &Image, cfg: &TraceConfig, s: &Strategy) -> Result<(Image, f64)> {
    let run = run_strategy(target, cfg, s)?;
    Ok((run.output, run.cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toygen::{generate_trace, synth_target, Recipe, TargetSpec};

    fn cm() -> CostModel {
        CostModel::from_trace_config(&TraceConfig::default(), DEFAULT_OVERHEAD).unwrap()
    }

    #[test]
    fn identifiers_roundtrip() {
        for s in default_ladder().into_iter().chain([Strategy::Hybrid { skip: 2, uncond: 2 }]) {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!(Strategy::Hybrid { skip: 2, uncond: 2 }.to_string(), "hybrid_2_2");
        assert!("skip".parse::<Strategy>().is_err());
        assert!("skip_x".parse::<Strategy>().is_err());
        assert!("fast_2".parse::<Strategy>().is_err());
        let json = serde_json::to_string(&Strategy::UncondReplace(2)).unwrap();
        assert_eq!(json, "\"uncond_2\"");
    }

    #[test]
    fn bounds() {
        assert!(Strategy::Skip(0).validate(12).is_err());
        assert!(Strategy::Skip(12).validate(12).is_err());
        assert!(Strategy::Skip(11).validate(12).is_ok());
        assert!(Strategy::Hybrid { skip: 6, uncond: 6 }.validate(12).is_err());
        assert!(Strategy::Hybrid { skip: 2, uncond: 2 }.validate(12).is_ok());
    }

    #[test]
    fn plans() {
        use StepMode::*;
        assert_eq!(Strategy::Skip(2).plan(5).unwrap(), vec![Full; 3]);
        assert_eq!(Strategy::UncondReplace(2).plan(5).unwrap(), vec![Full, Full, Full, CondOnly, CondOnly]);
        assert_eq!(
            Strategy::Hybrid { skip: 1, uncond: 2 }.plan(5).unwrap(),
            vec![Full, Full, CondOnly, CondOnly]
        );
    }

    #[test]
    fn speedup_examples() {
        let free = CostModel { overhead: 0.0, ..cm() };
        assert_eq!(free.speedup(&Strategy::None).unwrap(), 1.0);
        let cm = cm();
        assert_eq!(cm.speedup(&Strategy::None).unwrap(), 1.0 / 1.005);
        assert!((cm.speedup(&Strategy::Skip(3)).unwrap() - 1.0 / 0.315).abs() < 1e-9);
        let w = &cm.weights;
        let expect = 1.0 / (1.0 - (w[10] + w[11]) / 2.0 + 0.005);
        assert!((cm.speedup(&Strategy::UncondReplace(2)).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn hybrid_cost_is_additive() {
        let cm = cm();
        let w = &cm.weights;
        let h = Strategy::Hybrid { skip: 2, uncond: 2 };
        let expected = cm.baseline() - 2.0 * (w[10] + w[11]) - (w[8] + w[9]);
        assert!((cm.strategy_cost(&h).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn default_ladder_order() {
        let order = ladder_order(&cm(), &default_ladder()).unwrap();
        assert_eq!(order.first(), Some(&Strategy::Skip(3)));
        assert_eq!(order.last(), Some(&Strategy::None));
        let speeds: Vec<f64> = order.iter().map(|s| cm().speedup(s).unwrap()).collect();
        assert!(speeds.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(ladder_order(&cm(), &[Strategy::None]).unwrap(), vec![Strategy::None]);
        assert!(ladder_order(&cm(), &[]).is_err());
        assert!(ladder_order(&cm(), &[Strategy::Skip(1)]).is_err());
    }

    #[test]
    fn ties_prefer_skip() {
        // uniform weights over 4 steps: skip_1 and uncond_2 both save 2 * 0.25
        let cm = CostModel::new(vec![0.25; 4], 0.0).unwrap();
        let order = ladder_order(&cm, &[Strategy::UncondReplace(2), Strategy::None, Strategy::Skip(1)]).unwrap();
        assert_eq!(order, vec![Strategy::Skip(1), Strategy::UncondReplace(2), Strategy::None]);
    }

    #[test]
    fn none_reproduces_trace() {
        let cfg = TraceConfig::default();
        let target = synth_target(&TargetSpec::Procedural(Recipe::blobs(3, 1)), 256).unwrap();
        let (out, cost) = apply_strategy(&target, &cfg, &Strategy::None).unwrap();
        let trace = generate_trace(&target, &cfg).unwrap();
        assert_eq!(out, trace.steps[11].combined);
        assert_eq!(cost, cfg.baseline_cost());
    }

    #[test]
    fn replacement_without_gap_is_lossless() {
        let cfg = TraceConfig { alpha: 0.0, ..TraceConfig::default() };
        let target = synth_target(&TargetSpec::Procedural(Recipe::blobs(3, 2)), 256).unwrap();
        let (base, base_cost) = apply_strategy(&target, &cfg, &Strategy::None).unwrap();
        let (out, cost) = apply_strategy(&target, &cfg, &Strategy::UncondReplace(11)).unwrap();
        assert_eq!(out, base);
        let saved: f64 = cfg.cost_weights[1..].iter().sum();
        assert!((base_cost - cost - saved).abs() < 1e-12);
    }
}
