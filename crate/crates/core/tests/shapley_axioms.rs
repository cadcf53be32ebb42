mod common;

use common::*;
use proptest::prelude::*;
use synaudit::detector::OutputScale;
use synaudit::shapley::{
    exact_shapley, exact_shapley_with, kernel_shap, tree_shap, tree_shap_interactions, BackgroundSet,
    ValueFunctionSpec,
};

fn game_from(table: &[f64]) -> impl Fn(u64) -> f64 + Sync + '_ {
    move |m| table[m as usize]
}

fn cases() -> ProptestConfig {
    ProptestConfig {
        cases: 128,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cases())]

    #[test]
    fn efficiency_of_exact_on_arbitrary_games(p in 1usize..7, vals in prop::collection::vec(-5.0f64..5.0, 64)) {
        let n = 1usize << p;
        let phi = exact_shapley_with(p, game_from(&vals[..n])).unwrap();
        let total: f64 = phi.iter().sum();
        prop_assert!((total - (vals[n - 1] - vals[0])).abs() < 1e-9);
    }

    #[test]
    fn dummy_player_gets_nothing(p in 2usize..7, vals in prop::collection::vec(-5.0f64..5.0, 64), dummy in 0usize..6) {
        let dummy = dummy % p;
        // value ignores the dummy's bit
        let strip = |m: u64| -> u64 {
            let low = m & ((1 << dummy) - 1);
            let high = (m >> (dummy + 1)) << dummy;
            low | high
        };
        let phi = exact_shapley_with(p, |m| vals[strip(m) as usize]).unwrap();
        prop_assert!(phi[dummy].abs() <= 1e-9);
    }

    #[test]
    fn exchangeable_players_share_equally(p in 2usize..7, vals in prop::collection::vec(-5.0f64..5.0, 8)) {
        // symmetric in players 0 and 1: value depends on their count and the popcount of the rest
        let v = |m: u64| {
            let pair = (m & 1) + (m >> 1 & 1);
            let rest = (m >> 2).count_ones() as u64;
            vals[((pair * 3 + rest) % 8) as usize]
        };
        let phi = exact_shapley_with(p, v).unwrap();
        prop_assert!((phi[0] - phi[1]).abs() <= 1e-9);
    }

    #[test]
    fn linearity_of_exact(
        p in 1usize..7,
        a in prop::collection::vec(-5.0f64..5.0, 64),
        b in prop::collection::vec(-5.0f64..5.0, 64),
        wa in 0.0f64..3.0,
        wb in 0.0f64..3.0,
    ) {
        let pa = exact_shapley_with(p, game_from(&a)).unwrap();
        let pb = exact_shapley_with(p, game_from(&b)).unwrap();
        let pc = exact_shapley_with(p, |m| wa * a[m as usize] + wb * b[m as usize]).unwrap();
        for j in 0..p {
            prop_assert!((pc[j] - (wa * pa[j] + wb * pb[j])).abs() <= 1e-9);
        }
    }

    #[test]
    fn tree_engine_axioms(p in 2usize..7, n_trees in 1usize..5, depth in 1usize..5, seed in 0u64..10_000, r in 0usize..64) {
        let model = random_ensemble(p, n_trees, depth, seed);
        let table = exhaustive_table(p);
        let x = table.row(r % table.n_rows()).to_vec();
        let t = tree_shap(&model, &x).unwrap();
        prop_assert!(t.efficiency_gap().abs() < 1e-9);
        let used: std::collections::BTreeSet<usize> = model.trees.iter().flat_map(|tr| tr.features()).collect();
        for j in 0..p {
            if !used.contains(&j) {
                prop_assert_eq!(t.values[j], 0.0);
            }
        }
        let m = tree_shap_interactions(&model, &x).unwrap();
        prop_assert!(max_abs_diff(&m.row_sums(), &t.values) < 1e-9);
        prop_assert!(m.is_symmetric(1e-9));
    }

    #[test]
    fn model_level_efficiency(p in 2usize..6, seed in 0u64..10_000, r in 0usize..32, kseed in 0u64..100) {
        let model = random_ensemble(p, 3, 3, seed);
        let table = exhaustive_table(p);
        let bg = BackgroundSet::uniform(table.clone()).unwrap();
        let x = table.row(r % table.n_rows()).to_vec();
        for scale in [OutputScale::Probability, OutputScale::LogOdds] {
            let spec = ValueFunctionSpec { scale, ..ValueFunctionSpec::default() };
            let e = exact_shapley(&model, &x, &bg, &spec).unwrap();
            prop_assert!(e.efficiency_gap().abs() < 1e-9);
            let k = kernel_shap(&model, &x, &bg, &spec, p + 2, kseed).unwrap();
            prop_assert!(k.efficiency_gap().abs() < 1e-6);
        }
    }
}
