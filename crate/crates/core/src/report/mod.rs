//! End-to-end audit: detection, global importance, feature effects, local
//! explanations and counterfactuals, written as one versioned JSON report plus
//! SVG figures.

mod canvas;
mod render;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use render::{render_effects, render_force, render_importance, render_waterfall, WaterfallSource};

use crate::counterfactual::{generate_counterfactuals, CounterfactualSet, MCCEConfig};
use crate::dataset::{
    build_detection_dataset, load_csv, read_schema_file, train_test_split, ColumnKind, DetectionDataset, Provenance,
    Schema, Split, TabularDataset,
};
use crate::detector::{
    classify, evaluate, fit_gbdt, tune_with, Classifier, MetricsReport, OutputScale, TrainConfig, TreeEnsembleModel,
    TunerConfig,
};
use crate::effects::{class_effects, feature_effect, ClassEffect, EffectConfig, EffectResult, RegionKind};
use crate::error::{Error, Result};
use crate::generator::{fit_chain, SamplerConfig};
use crate::importance::{
    interaction_importance, permutation_importance, shap_importance, ImportanceReport, PfiConfig,
};
use crate::math::{mean, pearson, sample_sd};
use crate::rng::derive_seed;
use crate::shapley::{
    explain_instance, kernel_shap, tree_shap, tree_shap_interactions, BackgroundSet, ConditionalConfig,
    ConditionalSampler, ExplainConfig, ExplanationBundle, TagKind, ValueFunctionSpec,
};

pub const REPORT_SCHEMA_VERSION: &str = "synaudit.audit_report/1";
/// JSON schema the report validates against.
pub const REPORT_SCHEMA: &str = include_str!("../../schemas/audit_report.schema.json");

pub const DEFAULT_REPLICATIONS: usize = 10;
/// Absolute Pearson correlation above which a feature pair is called out in
/// the report's interpretation caveats.
pub const CORRELATION_CAVEAT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub seed: u64,
    /// Replications over seeds when a single synthetic file is given; with
    /// several files there is one replication per file.
    pub replications: usize,
    pub test_fraction: f64,
    /// Run the hyperparameter search on the first replication and reuse the
    /// winner for the others; `train` is used as given otherwise.
    pub tune: bool,
    pub tuner: TunerConfig,
    pub train: TrainConfig,
    /// Column schema file applied to both inputs; inferred when absent.
    pub schema_file: Option<PathBuf>,
    pub pfi: PfiConfig,
    /// Test rows whose attributions feed the global SHAP importances.
    pub shap_rows: usize,
    pub interaction_top_k: usize,
    pub effects: EffectConfig,
    /// Features to sweep; all when empty.
    pub effect_features: Vec<String>,
    pub explain: ExplainConfig,
    /// Add a conditional-value KernelSHAP vector to every explanation.
    pub conditional: bool,
    pub conditional_sampler: ConditionalConfig,
    pub n_imputations: usize,
    pub background_rows: usize,
    /// Explained rows per side (most confidently synthetic, most confidently real).
    pub n_explain: usize,
    pub counterfactual: MCCEConfig,
    /// Detected-synthetic test rows receiving counterfactuals.
    pub n_counterfactual: usize,
    pub sampler: SamplerConfig,
    pub waterfall_top_k: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            seed: 0,
            replications: DEFAULT_REPLICATIONS,
            test_fraction: 0.3,
            tune: true,
            tuner: TunerConfig::default(),
            train: TrainConfig::default(),
            schema_file: None,
            pfi: PfiConfig::default(),
            shap_rows: 500,
            interaction_top_k: 20,
            effects: EffectConfig {
                instance_sample: Some(1000),
                ..EffectConfig::default()
            },
            effect_features: Vec::new(),
            explain: ExplainConfig::default(),
            conditional: true,
            conditional_sampler: ConditionalConfig::default(),
            n_imputations: 50,
            background_rows: crate::shapley::DEFAULT_BACKGROUND_ROWS,
            n_explain: 3,
            counterfactual: MCCEConfig::default(),
            n_counterfactual: 10,
            sampler: SamplerConfig::default(),
            waterfall_top_k: 10,
        }
    }
}

impl AuditConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid("test_fraction must lie in (0, 1)"));
        }
        if self.shap_rows == 0 || self.interaction_top_k == 0 || self.waterfall_top_k == 0 {
            return Err(Error::invalid("shap_rows, interaction_top_k and waterfall_top_k must be positive"));
        }
        if self.background_rows == 0 || self.n_imputations == 0 {
            return Err(Error::invalid("background_rows and n_imputations must be positive"));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFingerprint {
    /// File name without directories.
    pub file: String,
    pub sha256: String,
    pub n_rows: usize,
    pub n_cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub best_cv_auc: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub replication_seeds: Vec<u64>,
    pub config: AuditConfig,
    pub real: DataFingerprint,
    pub synthetic: Vec<DataFingerprint>,
    pub schema_fingerprint: String,
    pub features: Vec<String>,
    pub train_config: TrainConfig,
    pub tuning: Option<TuningSummary>,
    pub caveats: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationMetrics {
    pub seed: u64,
    pub synthetic_index: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub test_auc_mean: f64,
    pub test_auc_sd: f64,
    pub test_accuracy_mean: f64,
    /// Synthetic rows classified real, averaged over replications.
    pub fpr_mean: f64,
    /// Real rows classified synthetic, averaged over replications.
    pub fnr_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSection {
    /// One value per replication for each feature.
    pub pfi: ImportanceReport,
    pub mean_abs_shap: ImportanceReport,
    pub interactions: ImportanceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEffect {
    pub effect: EffectResult,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classes: Option<Vec<ClassEffect>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceExplanation {
    /// Row index within the primary replication's test split.
    pub row: usize,
    pub bundle: ExplanationBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceCounterfactual {
    pub row: usize,
    pub set: CounterfactualSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingSource {
    Effects,
    Explanation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub source: FindingSource,
    /// JSON pointer to the report element that raised the finding.
    pub section: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRef {
    /// Path relative to the output directory.
    pub file: String,
    /// JSON pointer to the report section the figure draws.
    pub section: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: String,
    pub run: RunMetadata,
    pub headline: Headline,
    pub metrics: Vec<ReplicationMetrics>,
    pub importance: ImportanceSection,
    pub effects: Vec<FeatureEffect>,
    pub explanations: Vec<InstanceExplanation>,
    pub counterfactuals: Vec<InstanceCounterfactual>,
    pub findings: Vec<Finding>,
    pub figures: Vec<FigureRef>,
}

impl AuditReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Inputs of one audit run.
#[derive(Debug, Clone)]
pub struct AuditInputs {
    pub real: PathBuf,
    pub synthetic: Vec<PathBuf>,
}

fn fingerprint_file(path: &Path, d: &TabularDataset) -> Result<DataFingerprint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(DataFingerprint {
        file: path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        n_rows: d.n_rows(),
        n_cols: d.n_cols(),
    })
}

fn write_artifact(out_dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = out_dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

fn write_json<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_artifact(out_dir, name, &s)
}

struct Replication {
    seed: u64,
    synthetic_index: usize,
    model: TreeEnsembleModel,
    data: DetectionDataset,
    metrics: MetricsReport,
    pfi: ImportanceReport,
    shap: ImportanceReport,
    interactions: ImportanceReport,
}

fn replicate(
    real: &TabularDataset,
    synthetic: &TabularDataset,
    synthetic_index: usize,
    seed: u64,
    train: &TrainConfig,
    cfg: &AuditConfig,
) -> Result<Replication> {
    let d = build_detection_dataset(real, synthetic, seed)
        .and_then(|d| train_test_split(&d, cfg.test_fraction, seed))
        .map_err(|e| e.at_stage("split"))?;
    let model = fit_gbdt(
        &d.part(Split::Train)?,
        &TrainConfig {
            seed,
            ..train.clone()
        },
    )
    .map_err(|e| e.at_stage("train"))?;
    let metrics = evaluate(&model, &d).map_err(|e| e.at_stage("evaluate"))?;
    let importance = (|| -> Result<_> {
        let pfi = permutation_importance(
            &model,
            &d,
            &PfiConfig {
                seed: derive_seed(seed, &[0x9F1]),
                ..cfg.pfi.clone()
            },
        )?;
        let test = d.part(Split::Test)?;
        let rows = crate::effects::stratified_rows(&test.labels, cfg.shap_rows, derive_seed(seed, &[0x5A9]));
        let vectors = rows
            .par_iter()
            .map(|&i| tree_shap(&model, test.data.row(i)))
            .collect::<Result<Vec<_>>>()?;
        let matrices = rows
            .par_iter()
            .map(|&i| tree_shap_interactions(&model, test.data.row(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok((pfi, shap_importance(&vectors)?, interaction_importance(&matrices, cfg.interaction_top_k)?))
    })()
    .map_err(|e| e.at_stage("importance"))?;
    Ok(Replication {
        seed,
        synthetic_index,
        model,
        data: d,
        metrics,
        pfi: importance.0,
        shap: importance.1,
        interactions: importance.2,
    })
}

/// Interactions are combined by averaging each replication's top terms over
/// the union of pairs seen, absent pairs counting as zero.
fn combine_interactions(reports: &[&ImportanceReport], top_k: usize) -> ImportanceReport {
    let mut keys: Vec<Vec<String>> = Vec::new();
    for r in reports {
        for e in &r.entries {
            if !keys.contains(&e.features) {
                keys.push(e.features.clone());
            }
        }
    }
    let mut entries: Vec<crate::importance::ImportanceEntry> = keys
        .into_iter()
        .map(|features| {
            let values: Vec<f64> = reports
                .iter()
                .map(|r| r.entries.iter().find(|e| e.features == features).map_or(0.0, |e| e.mean))
                .collect();
            let m = mean(&values);
            let sd = sample_sd(&values);
            crate::importance::ImportanceEntry {
                features,
                mean: m,
                sd,
                se: sd / (values.len() as f64).sqrt(),
                values,
            }
        })
        .collect();
    entries.sort_by(|a, b| b.mean.total_cmp(&a.mean));
    entries.truncate(top_k);
    ImportanceReport {
        method: crate::importance::ImportanceMethod::Interaction,
        loss: None,
        entries,
    }
}

fn correlation_caveats(real: &TabularDataset) -> Vec<String> {
    let schema = real.schema();
    let numeric: Vec<usize> = (0..schema.len())
        .filter(|&j| schema.column(j).kind == ColumnKind::Numeric)
        .collect();
    let mut pairs = Vec::new();
    for (a, &i) in numeric.iter().enumerate() {
        for &j in &numeric[a + 1..] {
            if let Some(r) = pearson(&real.column(i), &real.column(j)) {
                if r.abs() > CORRELATION_CAVEAT_THRESHOLD {
                    pairs.push(format!("{} ~ {} (r = {r:.2})", schema.column(i).name, schema.column(j).name));
                }
            }
        }
    }
    let mut caveats = vec![
        "Permutation importance and marginal Shapley values evaluate the detector on feature combinations \
         that may never occur in real data when features are dependent; read them together with the \
         conditional attributions."
            .to_string(),
    ];
    if !pairs.is_empty() {
        caveats.push(format!(
            "Correlated feature pairs in the real data (|r| > {CORRELATION_CAVEAT_THRESHOLD}): {}.",
            pairs.join(", ")
        ));
    }
    caveats
}

/// Test rows ordered by confidence: synthetic rows the detector calls
/// synthetic (lowest score first) and real rows it calls real (highest first).
fn confident_rows(test: &DetectionDataset, scores: &[f64], label: u8, n: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..test.n_rows())
        .filter(|&i| test.labels[i] == label && classify(scores[i]) == label)
        .collect();
    rows.sort_by(|&a, &b| {
        let o = scores[a].total_cmp(&scores[b]);
        (if label == 0 { o } else { o.reverse() }).then(a.cmp(&b))
    });
    rows.truncate(n);
    rows
}

fn effect_findings(effects: &[FeatureEffect]) -> Vec<Finding> {
    let mut out = Vec::new();
    for (k, fe) in effects.iter().enumerate() {
        let e = &fe.effect;
        let pdp = e.pdp.as_deref().unwrap_or(&[]);
        for (f, flag) in e.flags.iter().enumerate() {
            let span = if e.grid.kind == crate::effects::GridKind::Categories {
                format!("= {}", e.grid.labels[flag.first])
            } else if flag.first == flag.last {
                format!("= {}", flag.from)
            } else {
                format!("in [{}, {}]", flag.from, flag.to)
            };
            let extreme = pdp[flag.first..=flag.last].iter().copied();
            let (what, bound) = match flag.kind {
                RegionKind::UnrealisticSynthetic => (
                    "values look synthetic (unrealistic or overproduced)",
                    format!("min PDP {:.3}", extreme.fold(f64::INFINITY, f64::min)),
                ),
                RegionKind::Underrepresented => (
                    "values are underrepresented in the synthetic data",
                    format!("max PDP {:.3}", extreme.fold(f64::NEG_INFINITY, f64::max)),
                ),
            };
            out.push(Finding {
                source: FindingSource::Effects,
                section: format!("/effects/{k}/effect/flags/{f}"),
                message: format!("`{}` {span}: {what}; {bound} outside 0.5 ± {}", e.grid.feature, e.delta),
            });
        }
    }
    out
}

fn explanation_findings(explanations: &[InstanceExplanation]) -> Vec<Finding> {
    let mut out = Vec::new();
    for (k, ex) in explanations.iter().enumerate() {
        for (t, tag) in ex.bundle.tags.iter().enumerate() {
            let side = match tag.kind {
                TagKind::UnrealisticValue => "pushes toward synthetic",
                TagKind::Underrepresented => "pushes toward real",
            };
            out.push(Finding {
                source: FindingSource::Explanation,
                section: format!("/explanations/{k}/bundle/tags/{t}"),
                message: format!(
                    "test row {} (score {:.3}): {}; contribution {:+.4} {side}",
                    ex.row, ex.bundle.score, tag.description, tag.contribution
                ),
            });
        }
    }
    out
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// All figures of a report as `(relative path, section pointer, svg)`.
pub fn render_figures(report: &AuditReport) -> Result<Vec<(String, String, String)>> {
    let mut out = Vec::new();
    let imp = &report.importance;
    out.push((
        "figures/importance.svg".to_string(),
        "/importance".to_string(),
        render_importance(&[&imp.pfi, &imp.mean_abs_shap])?,
    ));
    if !imp.interactions.entries.is_empty() {
        out.push((
            "figures/interactions.svg".to_string(),
            "/importance/interactions".to_string(),
            render_importance(&[&imp.interactions])?,
        ));
    }
    for (k, fe) in report.effects.iter().enumerate() {
        out.push((
            format!("figures/effect_{k:02}_{}.svg", file_stem(&fe.effect.grid.feature)),
            format!("/effects/{k}"),
            render_effects(&fe.effect)?,
        ));
    }
    let top_k = report.run.config.waterfall_top_k;
    for (k, ex) in report.explanations.iter().enumerate() {
        let vectors = &ex.bundle.vectors;
        let proba: Vec<_> = vectors.iter().filter(|v| v.scale == OutputScale::Probability).cloned().collect();
        let shown = if proba.is_empty() { vectors.clone() } else { proba };
        if !shown.is_empty() {
            let scale = shown[0].scale;
            let same: Vec<_> = shown.into_iter().filter(|v| v.scale == scale).collect();
            out.push((format!("figures/force_{k:02}.svg"), format!("/explanations/{k}/bundle/vectors"), render_force(&same)?));
        }
        if let Some(m) = &ex.bundle.interactions {
            out.push((
                format!("figures/waterfall_{k:02}.svg"),
                format!("/explanations/{k}/bundle/interactions"),
                render_waterfall(WaterfallSource::Interactions(m), top_k, true)?,
            ));
        }
    }
    Ok(out)
}

fn load_inputs(
    inputs: &AuditInputs,
    cfg: &AuditConfig,
) -> Result<(TabularDataset, Vec<TabularDataset>, DataFingerprint, Vec<DataFingerprint>)> {
    if inputs.synthetic.is_empty() {
        return Err(Error::invalid("at least one synthetic file is required"));
    }
    let schema: Option<Schema> = cfg.schema_file.as_ref().map(read_schema_file).transpose()?;
    let real = load_csv(&inputs.real, schema.as_ref())?.with_provenance(Provenance::Real);
    let real_fp = fingerprint_file(&inputs.real, &real)?;
    let mut syn = Vec::with_capacity(inputs.synthetic.len());
    let mut syn_fp = Vec::with_capacity(inputs.synthetic.len());
    for path in &inputs.synthetic {
        let d = load_csv(path, schema.as_ref())?.with_provenance(Provenance::Synthetic);
        syn_fp.push(fingerprint_file(path, &d)?);
        syn.push(d);
    }
    let mut union = real.schema().clone();
    for d in &syn {
        union = union.union(d.schema())?;
    }
    let real = real.conform_to(&union)?;
    let syn = syn.iter().map(|d| d.conform_to(&union)).collect::<Result<Vec<_>>>()?;
    Ok((real, syn, real_fp, syn_fp))
}

/// Runs the whole audit and writes `report.json`, per-stage JSON artifacts
/// and SVG figures into `out_dir`. A failing stage aborts the run with its
/// name attached; artifacts of the stages before it stay on disk.
pub fn run_audit(inputs: &AuditInputs, cfg: &AuditConfig, out_dir: &Path) -> Result<AuditReport> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e).at_stage("config"))?;
    write_json(out_dir, "config.json", cfg).map_err(|e| e.at_stage("config"))?;

    let (real, synthetic, real_fp, syn_fp) = load_inputs(inputs, cfg).map_err(|e| e.at_stage("ingest"))?;
    let n_rep = if synthetic.len() > 1 { synthetic.len() } else { cfg.replications };
    let seeds: Vec<u64> = (0..n_rep as u64).map(|r| derive_seed(cfg.seed, &[0xA0D, r])).collect();
    let syn_for = |r: usize| if synthetic.len() > 1 { r } else { 0 };

    let (train_cfg, tuning) = if cfg.tune {
        let d = build_detection_dataset(&real, &synthetic[0], seeds[0])
            .and_then(|d| train_test_split(&d, cfg.test_fraction, seeds[0]))
            .and_then(|d| d.part(Split::Train))
            .map_err(|e| e.at_stage("split"))?;
        let tuned = tune_with(
            &d,
            &TunerConfig {
                seed: derive_seed(cfg.seed, &[0x7E]),
                ..cfg.tuner.clone()
            },
        )
        .map_err(|e| e.at_stage("tune"))?;
        let summary = TuningSummary {
            best_cv_auc: tuned.best_cv_auc,
            n_trials: tuned.trials.len(),
        };
        write_json(out_dir, "tuning.json", &tuned).map_err(|e| e.at_stage("tune"))?;
        (tuned.best, Some(summary))
    } else {
        (cfg.train.clone(), None)
    };

    let reps: Vec<Replication> = (0..n_rep)
        .into_par_iter()
        .map(|r| replicate(&real, &synthetic[syn_for(r)], syn_for(r), seeds[r], &train_cfg, cfg))
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<ReplicationMetrics> = reps
        .iter()
        .map(|r| ReplicationMetrics {
            seed: r.seed,
            synthetic_index: r.synthetic_index,
            metrics: r.metrics.clone(),
        })
        .collect();
    write_json(out_dir, "metrics.json", &metrics).map_err(|e| e.at_stage("evaluate"))?;
    let aucs: Vec<f64> = metrics.iter().filter_map(|m| m.metrics.test.auc).collect();
    let headline = Headline {
        test_auc_mean: mean(&aucs),
        test_auc_sd: sample_sd(&aucs),
        test_accuracy_mean: mean(&metrics.iter().map(|m| m.metrics.test.accuracy).collect::<Vec<_>>()),
        fpr_mean: mean(&metrics.iter().filter_map(|m| m.metrics.test.fpr).collect::<Vec<_>>()),
        fnr_mean: mean(&metrics.iter().filter_map(|m| m.metrics.test.fnr).collect::<Vec<_>>()),
    };

    let importance = (|| -> Result<ImportanceSection> {
        let pfi: Vec<ImportanceReport> = reps.iter().map(|r| r.pfi.clone()).collect();
        let shap: Vec<ImportanceReport> = reps.iter().map(|r| r.shap.clone()).collect();
        let inter: Vec<&ImportanceReport> = reps.iter().map(|r| &r.interactions).collect();
        Ok(ImportanceSection {
            pfi: ImportanceReport::across_replications(&pfi)?,
            mean_abs_shap: ImportanceReport::across_replications(&shap)?,
            interactions: combine_interactions(&inter, cfg.interaction_top_k),
        })
    })()
    .map_err(|e| e.at_stage("importance"))?;
    write_json(out_dir, "importance.json", &importance).map_err(|e| e.at_stage("importance"))?;

    let primary = &reps[0];
    let model = &primary.model;
    let test = primary.data.part(Split::Test).map_err(|e| e.at_stage("effects"))?;
    let schema = model.schema().clone();

    let effects = (|| -> Result<Vec<FeatureEffect>> {
        let names = if cfg.effect_features.is_empty() {
            schema.names()
        } else {
            cfg.effect_features.clone()
        };
        let mut out = Vec::with_capacity(names.len());
        for (k, name) in names.iter().enumerate() {
            let ecfg = EffectConfig {
                seed: derive_seed(cfg.seed, &[0xEF, k as u64]),
                ..cfg.effects.clone()
            };
            let effect = feature_effect(model, &test, name, &ecfg)?;
            let classes = if schema.column(effect.grid.feature_index).kind == ColumnKind::Categorical {
                Some(class_effects(&effect)?)
            } else {
                None
            };
            out.push(FeatureEffect { effect, classes });
        }
        Ok(out)
    })()
    .map_err(|e| e.at_stage("effects"))?;
    write_json(out_dir, "effects.json", &effects).map_err(|e| e.at_stage("effects"))?;

    let scores = model.predict_proba(&test.data).map_err(|e| e.at_stage("explain"))?;
    let explanations = (|| -> Result<Vec<InstanceExplanation>> {
        let train = primary.data.part(Split::Train)?;
        let background = BackgroundSet::sample_from(&train.data, cfg.background_rows, derive_seed(cfg.seed, &[0xB6]))?;
        let marginal = ValueFunctionSpec {
            seed: derive_seed(cfg.seed, &[0x5E]),
            ..ValueFunctionSpec::default()
        };
        let conditional = if cfg.conditional {
            let sampler = ConditionalSampler::fit(&train.data, cfg.conditional_sampler.clone())?;
            Some(ValueFunctionSpec {
                seed: derive_seed(cfg.seed, &[0xC0]),
                ..ValueFunctionSpec::conditional(Arc::new(sampler), cfg.n_imputations)
            })
        } else {
            None
        };
        let mut rows = confident_rows(&test, &scores, 0, cfg.n_explain);
        rows.extend(confident_rows(&test, &scores, 1, cfg.n_explain));
        rows.iter()
            .map(|&i| {
                let x = test.data.row(i);
                let ecfg = ExplainConfig {
                    seed: derive_seed(cfg.seed, &[0xE1, i as u64]),
                    ..cfg.explain.clone()
                };
                let mut bundle = explain_instance(model, x, Some(test.labels[i]), &background, &marginal, &ecfg)?;
                if let Some(spec) = &conditional {
                    bundle.vectors.push(kernel_shap(
                        model,
                        x,
                        &background,
                        spec,
                        ecfg.n_coalitions,
                        derive_seed(cfg.seed, &[0xC1, i as u64]),
                    )?);
                }
                Ok(InstanceExplanation { row: i, bundle })
            })
            .collect()
    })()
    .map_err(|e| e.at_stage("explain"))?;
    write_json(out_dir, "explanations.json", &explanations).map_err(|e| e.at_stage("explain"))?;

    let counterfactuals = (|| -> Result<Vec<InstanceCounterfactual>> {
        if cfg.n_counterfactual == 0 {
            return Ok(Vec::new());
        }
        let real_rows = real.conform_to(&schema)?;
        let chain = fit_chain(
            &real_rows,
            &SamplerConfig {
                seed: derive_seed(cfg.seed, &[0xC4]),
                ..cfg.sampler.clone()
            },
        )?;
        let ranges = real_rows.numeric_ranges();
        confident_rows(&test, &scores, 0, cfg.n_counterfactual)
            .into_iter()
            .map(|i| {
                let mcfg = MCCEConfig {
                    seed: derive_seed(cfg.seed, &[0xCF, i as u64]),
                    ..cfg.counterfactual.clone()
                };
                Ok(InstanceCounterfactual {
                    row: i,
                    set: generate_counterfactuals(model, test.data.row(i), &chain, &ranges, &mcfg)?,
                })
            })
            .collect()
    })()
    .map_err(|e| e.at_stage("counterfactual"))?;
    write_json(out_dir, "counterfactuals.json", &counterfactuals).map_err(|e| e.at_stage("counterfactual"))?;

    let mut findings = effect_findings(&effects);
    findings.extend(explanation_findings(&explanations));
    let mut report = AuditReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        run: RunMetadata {
            replication_seeds: seeds,
            config: cfg.clone(),
            real: real_fp,
            synthetic: syn_fp,
            schema_fingerprint: schema.fingerprint(),
            features: schema.names(),
            train_config: train_cfg,
            tuning,
            caveats: correlation_caveats(&real),
        },
        headline,
        metrics,
        importance,
        effects,
        explanations,
        counterfactuals,
        findings,
        figures: Vec::new(),
    };
    let figures = render_figures(&report).map_err(|e| e.at_stage("render"))?;
    for (file, section, svg) in &figures {
        write_artifact(out_dir, file, svg).map_err(|e| e.at_stage("render"))?;
        report.figures.push(FigureRef {
            file: file.clone(),
            section: section.clone(),
        });
    }
    write_artifact(out_dir, "report.json", &report.to_json().map_err(|e| e.at_stage("report"))?)
        .map_err(|e| e.at_stage("report"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(AuditConfig::from_json(r#"{"replications": 2, "bogus": 1}"#).is_err());
        let c = AuditConfig::from_json(r#"{"replications": 2, "effects": {"resolution": 7}}"#).unwrap();
        assert_eq!(c.replications, 2);
        assert_eq!(c.effects.resolution, 7);
        assert_eq!(c.shap_rows, AuditConfig::default().shap_rows);
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("marital status/x"), "marital_status_x");
    }

    #[test]
    fn interaction_union_pads_missing_pairs_with_zero() {
        let entry = |f: &[&str], m: f64| crate::importance::ImportanceEntry {
            features: f.iter().map(|s| s.to_string()).collect(),
            mean: m,
            sd: 0.0,
            se: 0.0,
            values: vec![m],
        };
        let a = ImportanceReport {
            method: crate::importance::ImportanceMethod::Interaction,
            loss: None,
            entries: vec![entry(&["x", "y"], 2.0)],
        };
        let b = ImportanceReport {
            entries: vec![entry(&["x"], 1.0)],
            ..a.clone()
        };
        let c = combine_interactions(&[&a, &b], 5);
        assert_eq!(c.entries[0].features, vec!["x", "y"]);
        assert_eq!(c.entries[0].values, vec![2.0, 0.0]);
        assert_eq!(c.entries[1].values, vec![0.0, 1.0]);
    }
}
