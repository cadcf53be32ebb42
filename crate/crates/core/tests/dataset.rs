use proptest::prelude::*;
use synaudit::dataset::{
    build_detection_dataset, column_statistics, load_csv, train_test_split, ColumnSchema, Provenance, Schema,
    Split, TabularDataset,
};

const LEVELS: [&str; 4] = ["low", "mid", "high", "top"];

fn mixed_schema() -> Schema {
    Schema::new(vec![
        ColumnSchema::numeric("a"),
        ColumnSchema::categorical("level", LEVELS),
        ColumnSchema::numeric("b"),
    ])
    .unwrap()
}

fn mixed_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec((-1e6f64..1e6, 0usize..4, -1.0f64..1.0), 1..60)
        .prop_map(|rows| rows.into_iter().map(|(a, c, b)| vec![a, c as f64, b]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn csv_round_trip_is_cell_identical(rows in mixed_rows()) {
        let d = TabularDataset::from_rows(mixed_schema(), &rows, Provenance::Real).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        d.save_csv(&path).unwrap();
        let back = load_csv(&path, Some(&mixed_schema())).unwrap();
        prop_assert_eq!(back.n_rows(), d.n_rows());
        for (x, y) in d.rows().zip(back.rows()) {
            prop_assert_eq!(x[1], y[1]);
            for j in [0, 2] {
                prop_assert!((x[j] - y[j]).abs() <= 1e-12 * x[j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn detection_classes_are_equal_and_split_is_stratified(
        real in mixed_rows(),
        syn in mixed_rows(),
        seed in 0u64..1000,
        fraction in 0.1f64..0.9,
    ) {
        let r = TabularDataset::from_rows(mixed_schema(), &real, Provenance::Real).unwrap();
        let s = TabularDataset::from_rows(mixed_schema(), &syn, Provenance::Synthetic).unwrap();
        let d = build_detection_dataset(&r, &s, seed).unwrap();
        let (zeros, ones) = d.class_counts();
        prop_assert_eq!(zeros, ones);
        prop_assert_eq!(ones, real.len().min(syn.len()));
        if ones >= 2 {
            let split = train_test_split(&d, fraction, seed).unwrap();
            let assignment = split.split.as_ref().unwrap();
            let test_of = |label: u8| {
                assignment.iter().zip(&split.labels).filter(|(s, l)| **s == Split::Test && **l == label).count()
            };
            let (t0, t1) = (test_of(0), test_of(1));
            prop_assert!(t0.abs_diff(t1) <= 1);
            prop_assert!(t0 >= 1 && t1 >= 1 && t0 < ones && t1 < ones);
            let quota = fraction * ones as f64;
            if quota >= 1.0 && quota <= ones as f64 - 1.0 {
                let n = d.n_rows() as f64;
                prop_assert!(((t0 + t1) as f64 - (fraction * n).round()).abs() <= 1.0);
            }
            prop_assert_eq!(&split, &train_test_split(&d, fraction, seed).unwrap());
        }
    }

    #[test]
    fn frequencies_sum_to_one_and_correlations_are_symmetric(rows in mixed_rows()) {
        let d = TabularDataset::from_rows(mixed_schema(), &rows, Provenance::Real).unwrap();
        let stats = column_statistics(&d, &[]).unwrap();
        for m in &stats.categorical {
            let total: f64 = m.frequencies.iter().map(|f| f.frequency).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
        let c = &stats.correlations.values;
        for i in 0..c.len() {
            if let Some(v) = c[i][i] {
                prop_assert_eq!(v, 1.0);
            }
            for j in 0..c.len() {
                prop_assert_eq!(c[i][j], c[j][i]);
            }
        }
    }
}
