mod common;

use common::*;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use synaudit::dataset::{
    build_detection_dataset, train_test_split, ColumnSchema, DetectionDataset, Provenance, Schema, TabularDataset,
};
use synaudit::detector::{fit_gbdt, OutputScale, TrainConfig, TreeEnsembleModel};
use synaudit::importance::{
    interaction_importance, interaction_terms, permutation_importance, shap_importance, PfiConfig, PfiLoss,
};
use synaudit::rng::rng_for;
use synaudit::shapley::{exact_shapley, tree_shap, tree_shap_interactions, BackgroundSet, ValueFunctionSpec};
use synaudit::tree::{Node, SplitRule, Tree};

fn stump(feature: usize, threshold: f64, left: f64, right: f64) -> Tree {
    Tree {
        nodes: vec![
            Node::Internal {
                feature,
                rule: SplitRule::Numeric { threshold },
                left: 1,
                right: 2,
                default_left: true,
                cover: 2.0,
            },
            Node::Leaf { value: left, cover: 1.0 },
            Node::Leaf { value: right, cover: 1.0 },
        ],
    }
}

/// Balanced labels; column 0 equals the label, columns 1 and 2 are noise and a copy of column 0.
fn perfect_feature_data(n: usize, seed: u64) -> DetectionDataset {
    let mut rng = rng_for(seed, &[]);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let y = (i % 2) as f64;
            vec![y, rng.gen_range(0.0..1.0), y]
        })
        .collect();
    let labels = (0..n).map(|i| (i % 2) as u8).collect();
    let data = TabularDataset::from_rows(binary_schema(3), &rows, Provenance::Unlabeled).unwrap();
    DetectionDataset::new(data, labels, seed).unwrap()
}

fn perfect_model() -> TreeEnsembleModel {
    // real (label 1) iff f0 > 0.5
    TreeEnsembleModel::from_trees(binary_schema(3), vec![stump(0, 0.5, -6.0, 6.0)], 0.0)
}

#[test]
fn unused_feature_has_zero_pfi() {
    let d = perfect_feature_data(200, 1);
    let m = perfect_model();
    let acc = permutation_importance(
        &m,
        &d,
        &PfiConfig {
            loss: PfiLoss::OneMinusAccuracy,
            repeats: 5,
            seed: 3,
        },
    )
    .unwrap();
    assert_eq!(acc.entry("f1").unwrap().mean, 0.0);
    let ll = permutation_importance(&m, &d, &PfiConfig::default()).unwrap();
    assert!(ll.entry("f1").unwrap().mean.abs() <= 1e-12);
    assert!(ll.entry("f1").unwrap().values.iter().all(|v| v.abs() <= 1e-12));
}

#[test]
fn perfect_single_feature_costs_half_accuracy_when_permuted() {
    // a uniformly random permutation sends row i the value of a uniformly random row,
    // whose label differs with probability 1/2 on balanced labels
    let d = perfect_feature_data(1000, 2);
    let m = perfect_model();
    let cfg = PfiConfig {
        loss: PfiLoss::OneMinusAccuracy,
        repeats: 20,
        seed: 4,
    };
    let r = permutation_importance(&m, &d, &cfg).unwrap();
    let e = r.entry("f0").unwrap();
    assert!((e.mean - 0.5).abs() < 0.03, "{}", e.mean);
}

#[test]
fn unused_duplicate_column_gets_nothing() {
    let d = perfect_feature_data(300, 5);
    let m = perfect_model();
    let cfg = PfiConfig {
        loss: PfiLoss::OneMinusAccuracy,
        repeats: 10,
        seed: 0,
    };
    let r = permutation_importance(&m, &d, &cfg).unwrap();
    assert!(r.entry("f0").unwrap().mean > 0.4);
    assert_eq!(r.entry("f2").unwrap().mean, 0.0);
}

#[test]
fn single_row_is_rejected() {
    let d = perfect_feature_data(1, 0);
    assert!(permutation_importance(&perfect_model(), &d, &PfiConfig::default()).is_err());
}

fn shifted_data(seed: u64) -> DetectionDataset {
    let schema = Schema::new(vec![ColumnSchema::numeric("a"), ColumnSchema::numeric("b")]).unwrap();
    let mut rng = rng_for(seed, &[0x51]);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let make = |shift: f64, rng: &mut synaudit::rng::Rng| -> TabularDataset {
        let rows: Vec<Vec<f64>> = (0..600).map(|_| vec![n01.sample(rng) + shift, n01.sample(rng)]).collect();
        TabularDataset::from_rows(schema.clone(), &rows, Provenance::Unlabeled).unwrap()
    };
    let real = make(0.0, &mut rng);
    let syn = make(1.5, &mut rng);
    let d = build_detection_dataset(&real, &syn, seed).unwrap();
    train_test_split(&d, 0.3, seed).unwrap()
}

#[test]
fn dispersion_of_the_mean_shrinks_with_repeats() {
    // spread of the reported mean across 20 permutation seeds, per toy dataset
    for seed in 0..3 {
        let d = shifted_data(seed);
        let m = fit_gbdt(&d, &TrainConfig::default()).unwrap();
        let spread: Vec<f64> = [2usize, 8, 32]
            .iter()
            .map(|&repeats| {
                let means: Vec<f64> = (0..20)
                    .map(|k| {
                        let cfg = PfiConfig {
                            repeats,
                            seed: 1000 * seed + k,
                            ..PfiConfig::default()
                        };
                        permutation_importance(&m, &d, &cfg).unwrap().entry("a").unwrap().mean
                    })
                    .collect();
                synaudit::math::sample_sd(&means)
            })
            .collect();
        assert!(spread[0] > spread[1] && spread[1] > spread[2], "seed {seed}: {spread:?}");
    }
}

#[test]
fn shifted_feature_outranks_unshifted_one() {
    let d = shifted_data(7);
    let m = fit_gbdt(&d, &TrainConfig::default()).unwrap();
    let pfi = permutation_importance(&m, &d, &PfiConfig::default()).unwrap();
    assert!(pfi.entry("a").unwrap().mean > pfi.entry("b").unwrap().mean);

    let test = d.part(synaudit::dataset::Split::Test).unwrap();
    let vectors: Vec<_> = (0..test.n_rows()).map(|i| tree_shap(&m, test.data.row(i)).unwrap()).collect();
    let shap = shap_importance(&vectors).unwrap();
    assert!(shap.entry("a").unwrap().mean > shap.entry("b").unwrap().mean);
}

#[test]
fn one_active_feature_carries_almost_all_mass() {
    let m = TreeEnsembleModel::from_trees(binary_schema(3), vec![stump(1, 0.5, -2.0, 2.0)], 0.0);
    let table = exhaustive_table(3);
    let bg = BackgroundSet::uniform(table.clone()).unwrap();
    let spec = ValueFunctionSpec::default();
    let vectors: Vec<_> = (0..table.n_rows())
        .map(|i| exact_shapley(&m, table.row(i), &bg, &spec).unwrap())
        .collect();
    let r = shap_importance(&vectors).unwrap();
    let total: f64 = r.entries.iter().map(|e| e.mean).sum();
    assert!(r.entry("f1").unwrap().mean / total >= 0.99);
    assert!(r.entry("f0").unwrap().mean <= 1e-9);
}

#[test]
fn identically_zero_attributions_give_exact_zero() {
    let m = TreeEnsembleModel::from_trees(binary_schema(2), vec![stump(0, 0.5, -1.0, 1.0)], 0.0);
    let table = exhaustive_table(2);
    let vectors: Vec<_> = (0..4).map(|i| tree_shap(&m, table.row(i)).unwrap()).collect();
    let r = shap_importance(&vectors).unwrap();
    assert_eq!(r.entry("f1").unwrap().mean, 0.0);
}

fn xor_model() -> TreeEnsembleModel {
    let tree = Tree {
        nodes: vec![
            Node::Internal {
                feature: 0,
                rule: SplitRule::Numeric { threshold: 0.5 },
                left: 1,
                right: 2,
                default_left: true,
                cover: 4.0,
            },
            Node::Internal {
                feature: 1,
                rule: SplitRule::Numeric { threshold: 0.5 },
                left: 3,
                right: 4,
                default_left: true,
                cover: 2.0,
            },
            Node::Internal {
                feature: 1,
                rule: SplitRule::Numeric { threshold: 0.5 },
                left: 5,
                right: 6,
                default_left: true,
                cover: 2.0,
            },
            Node::Leaf { value: -1.0, cover: 1.0 },
            Node::Leaf { value: 1.0, cover: 1.0 },
            Node::Leaf { value: 1.0, cover: 1.0 },
            Node::Leaf { value: -1.0, cover: 1.0 },
        ],
    };
    TreeEnsembleModel::from_trees(binary_schema(2), vec![tree], 0.0)
}

#[test]
fn xor_pair_term_dominates() {
    // on the four corners the main effects vanish and each corner's pair term is +-1
    let m = xor_model();
    let table = exhaustive_table(2);
    let mats: Vec<_> = (0..4).map(|i| tree_shap_interactions(&m, table.row(i)).unwrap()).collect();
    let r = interaction_importance(&mats, 10).unwrap();
    assert_eq!(r.entries[0].features, vec!["f0".to_string(), "f1".to_string()]);
    assert!((r.entries[0].mean - 1.0).abs() < 1e-12);
    assert!(r.entries[1..].iter().all(|e| e.mean < 1e-12));
}

#[test]
fn additive_model_has_no_pair_terms() {
    let trees = vec![stump(0, 0.5, -1.0, 1.0), stump(1, 0.5, 0.5, -0.5), stump(2, 0.5, 2.0, 0.0)];
    let m = TreeEnsembleModel::from_trees(binary_schema(3), trees, 0.1);
    let table = exhaustive_table(3);
    let mats: Vec<_> = (0..8).map(|i| tree_shap_interactions(&m, table.row(i)).unwrap()).collect();
    let r = interaction_importance(&mats, 100).unwrap();
    for e in &r.entries {
        if e.features.len() == 2 {
            assert!(e.mean <= 1e-9);
        }
    }
}

#[test]
fn signed_terms_reconstruct_log_odds() {
    for seed in 0..5 {
        let m = random_ensemble(4, 4, 3, 300 + seed);
        let table = exhaustive_table(4);
        for i in [0, 5, 15] {
            let mat = tree_shap_interactions(&m, table.row(i)).unwrap();
            assert_eq!(mat.scale, OutputScale::LogOdds);
            let sum: f64 = interaction_terms(&mat).iter().map(|(_, v)| v).sum();
            assert!((sum - (mat.prediction - mat.base_value)).abs() < 1e-9);
        }
    }
}

#[test]
fn report_json_shape() {
    let d = perfect_feature_data(50, 9);
    let r = permutation_importance(&perfect_model(), &d, &PfiConfig::default()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(v["method"], "pfi");
    assert_eq!(v["loss"], "log_loss");
    let e = &v["entries"][0];
    for key in ["features", "mean", "sd", "values"] {
        assert!(e.get(key).is_some(), "{key}");
    }
}
