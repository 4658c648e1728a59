mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skipvar::decision::{
    accuracy, split_train_val, train, FeatureVector, ForestConfig, ModelKind, ModelParams, Node, Policy,
    Standardizer, TrainConfig, TrainedModel, Tree, TreeConfig,
};
use skipvar::strategies::Strategy;

const CLASSES: [Strategy; 3] = [Strategy::Skip(3), Strategy::UncondReplace(3), Strategy::None];

fn random_set(seed: u64, n: usize) -> (Vec<FeatureVector>, Vec<Strategy>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<FeatureVector> =
        (0..n).map(|_| FeatureVector::new(rng.random_range(0.0..0.1), rng.random_range(0.0..0.8))).collect();
    // noisy threshold rule so every class appears
    let ys = xs
        .iter()
        .map(|f| {
            let s = f.hf_ratio + 2.0 * f.hf_diff + rng.random_range(-0.1..0.1);
            if s < 0.35 {
                CLASSES[0]
            } else if s < 0.6 {
                CLASSES[1]
            } else {
                CLASSES[2]
            }
        })
        .collect();
    (xs, ys)
}

fn kinds() -> impl proptest::strategy::Strategy<Value = ModelKind> {
    prop_oneof![Just(ModelKind::Logreg), Just(ModelKind::Tree), Just(ModelKind::Forest)]
}

fn fast(kind: ModelKind) -> TrainConfig {
    match TrainConfig::default_for(kind) {
        TrainConfig::Logreg(mut c) => {
            c.max_epochs = 300;
            TrainConfig::Logreg(c)
        }
        TrainConfig::Forest(c) => TrainConfig::Forest(ForestConfig { trees: 10, ..c }),
        other => other,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    /// Positive per-feature affine maps are absorbed by standardization.
    #[test]
    fn predictions_invariant_under_affine_feature_maps(
        seed in 0u64..1000,
        kind in kinds(),
        a in 0.5f64..20.0,
        b in -1.0f64..1.0,
        c in 0.5f64..20.0,
        d in -1.0f64..1.0,
    ) {
        let (xs, ys) = random_set(seed, 60);
        let map = |f: &FeatureVector| FeatureVector::new(a * f.hf_diff + b, c * f.hf_ratio + d);
        let mapped: Vec<FeatureVector> = xs.iter().map(map).collect();
        let m1 = train(&xs, &ys, &CLASSES, &fast(kind)).unwrap();
        let m2 = train(&mapped, &ys, &CLASSES, &fast(kind)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut disagree = 0;
        for _ in 0..200 {
            let p = FeatureVector::new(rng.random_range(0.0..0.1), rng.random_range(0.0..0.8));
            if m1.predict(&p).unwrap() != m2.predict(&map(&p)).unwrap() {
                disagree += 1;
            }
        }
        // rounding can move a probe sitting on a boundary
        prop_assert!(disagree <= 2, "{disagree} of 200 probes changed");
    }

    #[test]
    fn standardized_prediction_matches_raw(seed in 0u64..1000, kind in kinds()) {
        let (xs, ys) = random_set(seed, 50);
        let m = train(&xs, &ys, &CLASSES, &fast(kind)).unwrap();
        for f in &xs {
            prop_assert_eq!(m.predict(f).unwrap(), m.predict_standardized(&m.standardizer.transform(f)));
        }
        // with an identity standardizer the raw path is the standardized path
        let ident = TrainedModel { standardizer: Standardizer::identity(2), ..m.clone() };
        for f in &xs {
            prop_assert_eq!(ident.predict(f).unwrap(), ident.predict_standardized(&f.to_array()));
        }
    }

    #[test]
    fn json_round_trip_preserves_predictions(seed in 0u64..1000, kind in kinds()) {
        let (xs, ys) = random_set(seed, 50);
        let m = train(&xs, &ys, &CLASSES, &fast(kind)).unwrap();
        let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &m);
        let (probe, _) = random_set(seed + 7, 100);
        for f in &probe {
            prop_assert_eq!(m.predict(f).unwrap(), back.predict(f).unwrap());
        }
    }

    #[test]
    fn tree_paths_respect_max_depth(seed in 0u64..1000, depth in 0usize..6, min_leaf in 1usize..6) {
        let (xs, ys) = random_set(seed, 80);
        let cfg = TrainConfig::Tree(TreeConfig { max_depth: depth, min_leaf });
        let m = train(&xs, &ys, &CLASSES, &cfg).unwrap();
        let ModelParams::Tree { nodes } = &m.params else { panic!("tree expected") };
        let tree = Tree { nodes: nodes.clone() };
        for f in &xs {
            prop_assert!(tree.evaluate(&m.standardizer.transform(f)).1 <= depth);
        }
        for n in nodes {
            if let Node::Split { threshold, .. } = n {
                prop_assert!(threshold.is_finite());
            }
        }
    }

    #[test]
    fn train_val_split_partitions(n in 2usize..200, ratio in 0.05f64..0.95, seed in 0u64..100) {
        let ids: Vec<usize> = (0..n).collect();
        let (a, b) = split_train_val(&ids, ratio, seed).unwrap();
        prop_assert!(!a.is_empty() && !b.is_empty());
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, ids);
    }
}

#[test]
fn separable_set_is_learned_by_every_kind() {
    let (xs, ys) = common::separable_set();
    assert!(common::standardized_margin(&xs, &ys) >= 2.0);
    for kind in [ModelKind::Logreg, ModelKind::Tree, ModelKind::Forest] {
        let m = train(&xs, &ys, &CLASSES, &TrainConfig::default_for(kind)).unwrap();
        assert_eq!(accuracy(&m, &xs, &ys).unwrap(), 1.0, "{kind}");
    }
}

#[test]
fn forest_validation_accuracy_close_to_logreg() {
    let (xs, ys) = common::separable_set();
    let idx: Vec<usize> = (0..xs.len()).collect();
    let (tr, va) = split_train_val(&idx, 0.8, 5).unwrap();
    let pick = |ix: &[usize]| -> (Vec<FeatureVector>, Vec<Strategy>) { ix.iter().map(|&i| (xs[i], ys[i])).unzip() };
    let (tx, ty) = pick(&tr);
    let (vx, vy) = pick(&va);
    let lr = train(&tx, &ty, &CLASSES, &TrainConfig::default_for(ModelKind::Logreg)).unwrap();
    let rf = train(&tx, &ty, &CLASSES, &TrainConfig::default_for(ModelKind::Forest)).unwrap();
    let (a_lr, a_rf) = (accuracy(&lr, &vx, &vy).unwrap(), accuracy(&rf, &vx, &vy).unwrap());
    assert!(a_rf >= a_lr - 0.05, "forest {a_rf} vs logreg {a_lr}");
}

#[test]
fn two_stage_policy_round_trips() {
    let (xs, ys) = random_set(3, 80);
    let skip_labels: Vec<Strategy> = ys.iter().map(|l| if l.is_skip() { *l } else { Strategy::None }).collect();
    let uncond_labels: Vec<Strategy> = ys.iter().map(|l| if l.is_uncond() { *l } else { Strategy::None }).collect();
    let cfg = TrainConfig::default_for(ModelKind::Tree);
    let policy = Policy::TwoStage {
        skip: train(&xs, &skip_labels, &[Strategy::Skip(3), Strategy::None], &cfg).unwrap(),
        uncond: train(&xs, &uncond_labels, &[Strategy::UncondReplace(3), Strategy::None], &cfg).unwrap(),
    };
    let back = Policy::from_json(&policy.to_json().unwrap()).unwrap();
    for f in &xs {
        assert_eq!(policy.predict(f).unwrap(), back.predict(f).unwrap());
    }
}
