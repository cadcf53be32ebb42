mod common;

use std::path::{Path, PathBuf};

use common::FnModel;
use rand::Rng as _;
use synaudit::dataset::{build_detection_dataset, ColumnSchema, Provenance, Schema, TabularDataset};
use synaudit::detector::{fit_gbdt, OutputScale, TrainConfig};
use synaudit::effects::{feature_effect, EffectConfig, RegionKind};
use synaudit::generator::{baseline_synthesize, SamplerMode};
use synaudit::importance::{interaction_importance, ImportanceEntry, ImportanceMethod, ImportanceReport};
use synaudit::report::{
    render_effects, render_force, render_importance, render_waterfall, run_audit, AuditConfig, AuditInputs,
    WaterfallSource, REPORT_SCHEMA,
};
use synaudit::rng::rng_for;
use synaudit::shapley::{tree_shap, tree_shap_interactions, Engine, ShapleyVector};
use synaudit::toy::correlated_toy;
use synaudit::Error;

fn quick_config() -> AuditConfig {
    let mut c: AuditConfig = AuditConfig {
        replications: 2,
        tune: false,
        shap_rows: 80,
        n_explain: 1,
        n_counterfactual: 2,
        n_imputations: 8,
        background_rows: 40,
        ..AuditConfig::default()
    };
    c.train.n_trees = 60;
    c.pfi.repeats = 2;
    c.effects.resolution = 12;
    c.effects.instance_sample = Some(200);
    c.effects.plot_sample = 40;
    c.explain.n_coalitions = 200;
    c.counterfactual.n_samples = 1500;
    c
}

fn write_pair(dir: &Path, n: usize, seed: u64) -> AuditInputs {
    let real = correlated_toy(n, seed);
    let syn = baseline_synthesize(&real, SamplerMode::Independent, n, seed).unwrap();
    let (rp, sp) = (dir.join("real.csv"), dir.join("synthetic.csv"));
    real.save_csv(&rp).unwrap();
    syn.save_csv(&sp).unwrap();
    AuditInputs {
        real: rp,
        synthetic: vec![sp],
    }
}

fn validate_against_schema(report_json: &str) {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let instance: serde_json::Value = serde_json::from_str(report_json).unwrap();
    let msgs: Vec<String> = match compiled.validate(&instance) {
        Ok(()) => Vec::new(),
        Err(errors) => errors.take(5).map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    assert!(msgs.is_empty(), "report violates its schema: {msgs:#?}");
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn toy_audit_is_complete_and_schema_valid() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_pair(tmp.path(), 1500, 3);
    let out = tmp.path().join("out");
    let report = run_audit(&inputs, &quick_config(), &out).unwrap();

    let text = std::fs::read_to_string(out.join("report.json")).unwrap();
    validate_against_schema(&text);
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();

    assert_eq!(report.metrics.len(), 2);
    assert!(report.headline.test_auc_mean > 0.6, "{:?}", report.headline);
    assert_eq!(report.effects.len(), 7);
    assert_eq!(report.explanations.len(), 2);
    for name in ["config.json", "metrics.json", "importance.json", "effects.json", "explanations.json", "counterfactuals.json"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    assert!(!report.figures.is_empty());
    for fig in &report.figures {
        assert!(out.join(&fig.file).is_file(), "{} missing", fig.file);
        assert!(value.pointer(&fig.section).is_some(), "figure {} points at nothing", fig.file);
    }

    let n_flags: usize = report.effects.iter().map(|e| e.effect.flags.len()).sum();
    let n_tags: usize = report.explanations.iter().map(|e| e.bundle.tags.len()).sum();
    assert_eq!(report.findings.len(), n_flags + n_tags);
    let mut sections: Vec<&str> = report.findings.iter().map(|f| f.section.as_str()).collect();
    for s in &sections {
        assert!(value.pointer(s).is_some(), "finding points at nothing: {s}");
    }
    sections.sort_unstable();
    sections.dedup();
    assert_eq!(sections.len(), report.findings.len(), "a flag was reported twice");
    assert!(report.run.caveats.iter().any(|c| c.contains("x1 ~ x2")), "{:?}", report.run.caveats);
    assert_eq!(report.run.real.n_rows, 1500);

    for e in &report.effects {
        let pdp = e.effect.pdp.as_ref().unwrap();
        for (g, v) in pdp.iter().enumerate() {
            let m = e.effect.ice.iter().map(|c| c.values[g]).sum::<f64>() / e.effect.ice.len() as f64;
            assert_eq!(*v, m);
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_pair(tmp.path(), 800, 4);
    let mut cfg = quick_config();
    cfg.tune = true;
    cfg.tuner.budget = 3;
    cfg.tuner.n_startup = 2;
    cfg.tuner.base.n_trees = 30;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_audit(&inputs, &cfg, &a).unwrap();
    run_audit(&inputs, &cfg, &b).unwrap();
    let fa = files_under(&a);
    let fb = files_under(&b);
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&a).unwrap(), y.strip_prefix(&b).unwrap());
        assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn identical_inputs_are_indistinguishable() {
    let tmp = tempfile::tempdir().unwrap();
    let real = correlated_toy(3000, 8);
    let p = tmp.path().join("real.csv");
    real.save_csv(&p).unwrap();
    let inputs = AuditInputs {
        real: p.clone(),
        synthetic: vec![p],
    };
    let mut cfg = quick_config();
    cfg.train = TrainConfig::default();
    cfg.replications = 3;
    cfg.effects.instance_sample = Some(600);
    let report = run_audit(&inputs, &cfg, &tmp.path().join("out")).unwrap();
    assert!((report.headline.test_auc_mean - 0.5).abs() <= 0.05, "{:?}", report.headline);
    for e in &report.effects {
        let pdp = e.effect.pdp.as_ref().unwrap();
        assert!(
            e.effect.flags.is_empty(),
            "`{}` flagged with pdp {pdp:?}",
            e.effect.grid.feature
        );
    }
}

#[test]
fn missing_synthetic_file_fails_in_ingestion() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_pair(tmp.path(), 200, 1);
    let broken = AuditInputs {
        real: inputs.real,
        synthetic: vec![tmp.path().join("nope.csv")],
    };
    let err = run_audit(&broken, &quick_config(), &tmp.path().join("out")).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "ingest", .. }), "{err}");
    assert!(err.to_string().contains("ingest"));
    assert!(err.is_validation());
}

#[test]
fn failing_stage_keeps_earlier_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_pair(tmp.path(), 600, 2);
    let cfg = AuditConfig {
        effect_features: vec!["no_such_column".into()],
        ..quick_config()
    };
    let out = tmp.path().join("out");
    let err = run_audit(&inputs, &cfg, &out).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "effects", .. }), "{err}");
    assert!(out.join("metrics.json").is_file());
    assert!(out.join("importance.json").is_file());
    assert!(!out.join("effects.json").exists());
    assert!(!out.join("report.json").exists());
}

#[test]
fn grid_resolution_override_reaches_effects() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_pair(tmp.path(), 600, 5);
    let cfg: AuditConfig = serde_json::from_value(serde_json::json!({
        "replications": 1,
        "tune": false,
        "train": {"n_trees": 20},
        "pfi": {"repeats": 1},
        "shap_rows": 20,
        "effects": {"resolution": 5, "instance_sample": 100},
        "n_explain": 0,
        "n_counterfactual": 0
    }))
    .unwrap();
    let report = run_audit(&inputs, &cfg, &tmp.path().join("out")).unwrap();
    for e in &report.effects {
        if e.classes.is_none() {
            assert!(e.effect.grid.points.len() <= 5);
            assert!(e.effect.grid.points.len() >= 2);
        }
        assert_eq!(e.effect.ice.len(), 100);
    }
    assert!(report.explanations.is_empty() && report.counterfactuals.is_empty());
}

fn parse(svg: &str) -> roxmltree::Document<'_> {
    let doc = roxmltree::Document::parse(svg).expect("well-formed svg");
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    assert_eq!(root.attribute("viewBox"), Some("0 0 800 500"));
    doc
}

fn with_class<'a>(doc: &'a roxmltree::Document<'a>, class: &str) -> Vec<roxmltree::Node<'a, 'a>> {
    doc.descendants()
        .filter(|n| n.attribute("class").is_some_and(|c| c.split(' ').any(|k| k == class)))
        .collect()
}

fn num(n: &roxmltree::Node<'_, '_>, attr: &str) -> f64 {
    n.attribute(attr).unwrap().parse().unwrap()
}

fn entry(name: &str, values: Vec<f64>) -> ImportanceEntry {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    ImportanceEntry {
        features: vec![name.into()],
        mean,
        sd: 0.0,
        se: 0.0,
        values,
    }
}

#[test]
fn three_features_give_three_sorted_bars() {
    let r = ImportanceReport {
        method: ImportanceMethod::Pfi,
        loss: None,
        entries: vec![entry("b", vec![0.2]), entry("a", vec![0.5]), entry("c", vec![0.1])],
    };
    let svg = render_importance(&[&r]).unwrap();
    let doc = parse(&svg);
    let bars = with_class(&doc, "bar");
    assert_eq!(bars.len(), 3);
    let values: Vec<f64> = bars.iter().map(|b| num(b, "data-value")).collect();
    assert_eq!(values, vec![0.5, 0.2, 0.1]);
    let ys: Vec<f64> = bars.iter().map(|b| num(b, "y")).collect();
    assert!(ys.windows(2).all(|w| w[0] < w[1]));
    assert!(with_class(&doc, "box").is_empty());
    assert_eq!(svg, render_importance(&[&r]).unwrap());
}

#[test]
fn replicated_importance_draws_boxes_with_whiskers() {
    let reps: Vec<ImportanceReport> = (0..10)
        .map(|k| ImportanceReport {
            method: ImportanceMethod::MeanAbsShap,
            loss: None,
            entries: vec![
                entry("x", vec![1.0 + 0.01 * k as f64]),
                entry("y", vec![0.5 - 0.02 * k as f64]),
                entry("z", vec![0.1]),
            ],
        })
        .collect();
    let combined = ImportanceReport::across_replications(&reps).unwrap();
    let svg = render_importance(&[&combined]).unwrap();
    let doc = parse(&svg);
    let groups = with_class(&doc, "entry");
    assert_eq!(groups.len(), 3);
    for g in groups {
        let kids: Vec<&str> = g.children().filter_map(|c| c.attribute("class")).collect();
        assert_eq!(kids.iter().filter(|c| **c == "box").count(), 1);
        assert_eq!(kids.iter().filter(|c| **c == "whisker").count(), 2);
    }
}

#[test]
fn interaction_chart_shows_top_twenty_with_pair_labels() {
    let real = correlated_toy(1500, 9);
    let syn = baseline_synthesize(&real, SamplerMode::Independent, 1500, 9).unwrap();
    let d = build_detection_dataset(&real, &syn, 9).unwrap();
    let m = fit_gbdt(&d, &TrainConfig { n_trees: 40, ..TrainConfig::default() }).unwrap();
    let matrices: Vec<_> = (0..30).map(|i| tree_shap_interactions(&m, d.data.row(i * 50)).unwrap()).collect();
    let top = interaction_importance(&matrices, 20).unwrap();
    let svg = render_importance(&[&top]).unwrap();
    let doc = parse(&svg);
    assert_eq!(with_class(&doc, "bar").len(), 20);
    let labels: Vec<&str> = with_class(&doc, "feature-label").iter().filter_map(|n| n.text()).collect();
    assert!(labels.iter().any(|l| l.contains(" × ")), "{labels:?}");
}

#[test]
fn constant_model_draws_a_flat_line_at_one_half() {
    let real = correlated_toy(400, 1);
    let syn = baseline_synthesize(&real, SamplerMode::Independent, 400, 1).unwrap();
    let d = build_detection_dataset(&real, &syn, 1).unwrap();
    let model = FnModel {
        schema: d.data.schema().clone(),
        f: |_: &[f64]| 0.0,
    };
    let e = feature_effect(&model, &d, "age", &EffectConfig::default()).unwrap();
    let svg = render_effects(&e).unwrap();
    let doc = parse(&svg);
    let pdp = with_class(&doc, "pdp");
    assert_eq!(pdp.len(), 1);
    let ys: Vec<&str> = pdp[0]
        .attribute("points")
        .unwrap()
        .split(' ')
        .map(|p| p.split(',').nth(1).unwrap())
        .collect();
    let threshold = with_class(&doc, "threshold");
    let y_half = format!("{:.2}", num(&threshold[0], "y1"));
    assert!(ys.iter().all(|y| *y == y_half), "{ys:?} vs {y_half}");
    assert!(with_class(&doc, "flag").is_empty());
}

#[test]
fn flagged_spike_is_shaded() {
    let mut rng = rng_for(11, &[]);
    let schema = Schema::new(vec![ColumnSchema::numeric("x"), ColumnSchema::numeric("z")]).unwrap();
    let real: Vec<Vec<f64>> = (0..1500).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
    let syn: Vec<Vec<f64>> = (0..1500)
        .map(|i| vec![if i % 5 == 0 { 2.0 } else { rng.gen_range(0.0..1.0) }, rng.gen_range(0.0..1.0)])
        .collect();
    let real = TabularDataset::from_rows(schema.clone(), &real, Provenance::Real).unwrap();
    let syn = TabularDataset::from_rows(schema, &syn, Provenance::Synthetic).unwrap();
    let d = build_detection_dataset(&real, &syn, 1).unwrap();
    let m = fit_gbdt(&d, &TrainConfig::default()).unwrap();
    let e = feature_effect(&m, &d, "x", &EffectConfig::default()).unwrap();
    assert!(e.flags.iter().any(|f| f.kind == RegionKind::UnrealisticSynthetic && f.to == 2.0));
    let svg = render_effects(&e).unwrap();
    let doc = parse(&svg);
    let shaded = with_class(&doc, "flag");
    assert_eq!(shaded.len(), e.flags.len());
    assert!(shaded.iter().any(|n| n.attribute("data-kind") == Some("unrealistic_synthetic")
        && num(n, "data-from") <= 2.0
        && num(n, "data-to") >= 2.0));
    assert_eq!(with_class(&doc, "ice").len(), 200);
    assert!(!with_class(&doc, "hist-real").is_empty());
}

#[test]
fn fourteen_classes_give_fourteen_box_groups() {
    let cats: Vec<String> = (0..14).map(|k| format!("c{k}")).collect();
    let schema = Schema::new(vec![ColumnSchema::categorical("job", cats.clone()), ColumnSchema::numeric("z")]).unwrap();
    let mut rng = rng_for(3, &[]);
    let rows = |rng: &mut synaudit::rng::Rng, skew: bool| -> Vec<Vec<f64>> {
        (0..1400)
            .map(|_| {
                let k = if skew && rng.gen_bool(0.3) { 0 } else { rng.gen_range(0..14) };
                vec![k as f64, rng.gen_range(0.0..1.0)]
            })
            .collect()
    };
    let real = TabularDataset::from_rows(schema.clone(), &rows(&mut rng, false), Provenance::Real).unwrap();
    let syn = TabularDataset::from_rows(schema, &rows(&mut rng, true), Provenance::Synthetic).unwrap();
    let d = build_detection_dataset(&real, &syn, 2).unwrap();
    let m = fit_gbdt(&d, &TrainConfig { n_trees: 50, ..TrainConfig::default() }).unwrap();
    let e = feature_effect(&m, &d, "job", &EffectConfig::default()).unwrap();
    let svg = render_effects(&e).unwrap();
    let doc = parse(&svg);
    assert_eq!(with_class(&doc, "class-group").len(), 14);
    assert_eq!(with_class(&doc, "class-box").len(), 14);
    assert_eq!(with_class(&doc, "freq-real").len(), 14);
    assert_eq!(with_class(&doc, "pdp-point").len(), 14);
}

fn vector(scale: OutputScale, values: Vec<f64>, base: f64) -> ShapleyVector {
    let prediction = base + values.iter().sum::<f64>();
    ShapleyVector {
        engine: Engine::Kernel,
        mode: None,
        scale,
        features: (0..values.len()).map(|j| format!("f{j}")).collect(),
        values,
        base_value: base,
        prediction,
    }
}

#[test]
fn zero_vector_gives_baseline_only_force_plot() {
    let svg = render_force(&[vector(OutputScale::Probability, vec![0.0; 4], 0.5)]).unwrap();
    let doc = parse(&svg);
    assert!(with_class(&doc, "segment").is_empty());
    assert_eq!(with_class(&doc, "base").len(), 1);
    assert!(svg.contains("probability of real"));
}

#[test]
fn force_segments_add_up_to_the_explained_difference() {
    let v = vector(OutputScale::LogOdds, vec![0.7, -1.2, 0.05, 0.0, 2.5], -0.3);
    let svg = render_force(std::slice::from_ref(&v)).unwrap();
    let doc = parse(&svg);
    let segs = with_class(&doc, "segment");
    assert_eq!(segs.len(), 4);
    let total: f64 = segs.iter().map(|s| num(s, "data-value")).sum();
    assert!((total - (v.prediction - v.base_value)).abs() <= 1e-9);
    assert!(svg.contains("log-odds of real"));
}

#[test]
fn mixed_scales_in_one_figure_are_rejected() {
    let a = vector(OutputScale::Probability, vec![0.1, -0.2], 0.5);
    let b = vector(OutputScale::LogOdds, vec![1.0, -2.0], 0.0);
    assert!(matches!(render_force(&[a.clone(), b]), Err(Error::InvalidInput(_))));
    assert!(render_force(&[]).is_err());
    assert!(render_force(&[a.clone(), a]).is_ok());
}

#[test]
fn waterfall_rest_bar_preserves_efficiency() {
    let real = correlated_toy(1200, 6);
    let syn = baseline_synthesize(&real, SamplerMode::Independent, 1200, 6).unwrap();
    let d = build_detection_dataset(&real, &syn, 6).unwrap();
    let m = fit_gbdt(&d, &TrainConfig { n_trees: 60, ..TrainConfig::default() }).unwrap();
    for i in [0, 17, 900] {
        let x = d.data.row(i);
        let inter = tree_shap_interactions(&m, x).unwrap();
        let phi = tree_shap(&m, x).unwrap();
        for (source, top_k) in [
            (WaterfallSource::Interactions(&inter), 5),
            (WaterfallSource::Interactions(&inter), 100),
            (WaterfallSource::Vector(&phi), 3),
        ] {
            let svg = render_waterfall(source, top_k, true).unwrap();
            let doc = parse(&svg);
            let segs = with_class(&doc, "segment");
            let total: f64 = segs.iter().map(|s| num(s, "data-value")).sum();
            assert!((total - (inter.prediction - inter.base_value)).abs() <= 1e-9, "row {i} top {top_k}");
            let rest = with_class(&doc, "rest");
            let n_terms = match source {
                WaterfallSource::Interactions(_) => 7 + 21,
                WaterfallSource::Vector(_) => 7,
            };
            assert_eq!(rest.len(), usize::from(top_k < n_terms));
            assert!(svg.contains("log-odds of real"));
        }
    }
    let zero = vector(OutputScale::Probability, vec![0.0; 3], 0.4);
    assert!(render_waterfall(WaterfallSource::Vector(&zero), 0, true).is_err());
}
