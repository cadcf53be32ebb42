//! Local attributions of detector outputs: exact enumeration, KernelSHAP,
//! path-dependent tree Shapley values and pairwise interaction values.

mod conditional;
mod exact;
mod kernel;
mod treeshap;

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use conditional::{ConditionalConfig, ConditionalSampler};
pub use exact::{exact_shapley_with, DEFAULT_EXACT_LIMIT};
pub use kernel::{kernel_shap_with, shapley_kernel_weight};
pub use treeshap::{tree_shap_interaction_values, tree_shap_values};

use crate::dataset::{Provenance, TabularDataset};
use crate::detector::{Classifier, OutputScale, TreeEnsembleModel};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for};

pub const DEFAULT_BACKGROUND_ROWS: usize = 100;
pub const DEFAULT_KERNEL_COALITIONS: usize = 2000;

/// Reference rows that stand in for absent features, with weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet {
    pub rows: TabularDataset,
    pub weights: Vec<f64>,
}

impl BackgroundSet {
    pub fn new(rows: TabularDataset, weights: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("background set has no rows".into()));
        }
        if weights.len() != rows.n_rows() || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("background weights must be nonnegative, one per row"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("background weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(BackgroundSet { rows, weights })
    }

    pub fn uniform(rows: TabularDataset) -> Result<Self> {
        let n = rows.n_rows();
        Self::new(rows, vec![1.0; n])
    }

    /// Seeded draw of up to `n` distinct rows from a pool.
    pub fn sample_from(pool: &TabularDataset, n: usize, seed: u64) -> Result<Self> {
        let mut idx: Vec<usize> = (0..pool.n_rows()).collect();
        if idx.len() > n {
            idx.shuffle(&mut rng_for(seed, &[0xB6]));
            idx.truncate(n);
            idx.sort_unstable();
        }
        Self::uniform(pool.select_rows(&idx).with_provenance(Provenance::Unlabeled))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMode {
    Marginal,
    Conditional,
}

/// How absent features are filled in when valuing a coalition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueFunctionSpec {
    pub mode: ValueMode,
    /// Draws per coalition in conditional mode.
    pub n_imputations: usize,
    pub scale: OutputScale,
    pub seed: u64,
    #[serde(skip)]
    pub sampler: Option<Arc<ConditionalSampler>>,
}

impl Default for ValueFunctionSpec {
    fn default() -> Self {
        ValueFunctionSpec {
            mode: ValueMode::Marginal,
            n_imputations: 100,
            scale: OutputScale::Probability,
            seed: 0,
            sampler: None,
        }
    }
}

impl ValueFunctionSpec {
    pub fn conditional(sampler: Arc<ConditionalSampler>, n_imputations: usize) -> Self {
        ValueFunctionSpec {
            mode: ValueMode::Conditional,
            n_imputations,
            sampler: Some(sampler),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_imputations == 0 {
            return Err(Error::invalid("n_imputations must be at least 1"));
        }
        if self.mode == ValueMode::Conditional && self.sampler.is_none() {
            return Err(Error::invalid("conditional value function needs a fitted sampler"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Exact,
    Kernel,
    Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyVector {
    pub engine: Engine,
    /// Absent for the tree engine, whose reference is implied by node covers.
    pub mode: Option<ValueMode>,
    pub scale: OutputScale,
    pub features: Vec<String>,
    pub values: Vec<f64>,
    pub base_value: f64,
    pub prediction: f64,
}

impl ShapleyVector {
    /// `base + sum(values) - prediction`.
    pub fn efficiency_gap(&self) -> f64 {
        self.base_value + self.values.iter().sum::<f64>() - self.prediction
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    pub scale: OutputScale,
    pub features: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub base_value: f64,
    pub prediction: f64,
}

impl InteractionMatrix {
    pub fn row_sums(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().flatten().sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let p = self.values.len();
        self.values.iter().all(|r| r.len() == p)
            && (0..p).all(|i| (0..i).all(|j| (self.values[i][j] - self.values[j][i]).abs() <= tol))
    }
}

/// Coalition worth under a value function: model output with present features
/// taken from `instance` and absent ones from reference rows.
pub fn coalition_value<C: Classifier + ?Sized>(
    model: &C,
    instance: &[f64],
    background: &BackgroundSet,
    spec: &ValueFunctionSpec,
    mask: u64,
) -> f64 {
    let p = instance.len();
    let mut row = instance.to_vec();
    let fill = |src: &[f64], row: &mut Vec<f64>| {
        for j in 0..p {
            if mask >> j & 1 == 0 {
                row[j] = src[j];
            }
        }
    };
    match (spec.mode, &spec.sampler) {
        (ValueMode::Conditional, Some(sampler)) => {
            let mut rng = rng_for(spec.seed, &[0xC0D, mask]);
            let draws = sampler.draw(mask, instance, spec.n_imputations, &mut rng);
            let data = sampler.data();
            let total: f64 = draws
                .iter()
                .map(|&r| {
                    fill(data.row(r), &mut row);
                    model.output(&row, spec.scale)
                })
                .sum();
            total / draws.len() as f64
        }
        _ => {
            let mut total = 0.0;
            for (b, &w) in background.rows.rows().zip(&background.weights) {
                fill(b, &mut row);
                total += w * model.output(&row, spec.scale);
            }
            total
        }
    }
}

fn check_instance<C: Classifier + ?Sized>(model: &C, instance: &[f64], background: &BackgroundSet) -> Result<()> {
    let p = model.schema().len();
    if instance.len() != p {
        return Err(Error::SchemaMismatch(format!(
            "instance has {} values, model expects {p}",
            instance.len()
        )));
    }
    model.check_schema(&background.rows)
}

fn vector(
    engine: Engine,
    mode: Option<ValueMode>,
    scale: OutputScale,
    features: Vec<String>,
    values: Vec<f64>,
    base_value: f64,
    prediction: f64,
) -> ShapleyVector {
    ShapleyVector {
        engine,
        mode,
        scale,
        features,
        values,
        base_value,
        prediction,
    }
}

pub fn exact_shapley<C: Classifier + ?Sized>(
    model: &C,
    instance: &[f64],
    background: &BackgroundSet,
    spec: &ValueFunctionSpec,
) -> Result<ShapleyVector> {
    exact_shapley_limited(model, instance, background, spec, DEFAULT_EXACT_LIMIT)
}

pub fn exact_shapley_limited<C: Classifier + ?Sized>(
    model: &C,
    instance: &[f64],
    background: &BackgroundSet,
    spec: &ValueFunctionSpec,
    exact_limit: usize,
) -> Result<ShapleyVector> {
    spec.validate()?;
    check_instance(model, instance, background)?;
    let p = instance.len();
    if p > exact_limit {
        return Err(Error::invalid(format!(
            "{p} features exceed the exact enumeration limit of {exact_limit}"
        )));
    }
    let v = |m: u64| coalition_value(model, instance, background, spec, m);
    let values = exact_shapley_with(p, v)?;
    Ok(vector(
        Engine::Exact,
        Some(spec.mode),
        spec.scale,
        model.schema().names(),
        values,
        v(0),
        model.output(instance, spec.scale),
    ))
}

pub fn kernel_shap<C: Classifier + ?Sized>(
    model: &C,
    instance: &[f64],
    background: &BackgroundSet,
    spec: &ValueFunctionSpec,
    n_coalitions: usize,
    seed: u64,
) -> Result<ShapleyVector> {
    spec.validate()?;
    check_instance(model, instance, background)?;
    let v = |m: u64| coalition_value(model, instance, background, spec, m);
    let values = kernel_shap_with(instance.len(), v, n_coalitions, seed)?;
    Ok(vector(
        Engine::Kernel,
        Some(spec.mode),
        spec.scale,
        model.schema().names(),
        values,
        v(0),
        model.output(instance, spec.scale),
    ))
}

/// Base value of the tree engine: intercept plus each tree's cover-weighted mean leaf.
pub fn tree_base_value(model: &TreeEnsembleModel) -> f64 {
    model.base_score + model.trees.iter().map(|t| t.expected_value()).sum::<f64>()
}

pub fn tree_shap(model: &TreeEnsembleModel, instance: &[f64]) -> Result<ShapleyVector> {
    let p = model.schema.len();
    if instance.len() != p {
        return Err(Error::SchemaMismatch(format!("instance has {} values, model expects {p}", instance.len())));
    }
    let values = tree_shap_values(&model.trees, instance, p)?;
    Ok(vector(
        Engine::Tree,
        None,
        OutputScale::LogOdds,
        model.schema.names(),
        values,
        tree_base_value(model),
        model.margin(instance),
    ))
}

pub fn tree_shap_interactions(model: &TreeEnsembleModel, instance: &[f64]) -> Result<InteractionMatrix> {
    let p = model.schema.len();
    if instance.len() != p {
        return Err(Error::SchemaMismatch(format!("instance has {} values, model expects {p}", instance.len())));
    }
    Ok(InteractionMatrix {
        scale: OutputScale::LogOdds,
        features: model.schema.names(),
        values: tree_shap_interaction_values(&model.trees, instance, p)?,
        base_value: tree_base_value(model),
        prediction: model.margin(instance),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagKind {
    /// A feature pushing a synthetic row toward "synthetic".
    UnrealisticValue,
    /// A feature pushing a real row toward "real".
    Underrepresented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationTag {
    pub feature: String,
    pub kind: TagKind,
    pub engine: Engine,
    pub contribution: f64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub engines: Vec<Engine>,
    /// Distance from 0.5 a score must exceed before tags are attached.
    pub tag_margin: f64,
    pub top_k_tags: usize,
    pub n_coalitions: usize,
    pub interactions: bool,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            engines: vec![Engine::Tree, Engine::Kernel],
            tag_margin: 0.1,
            top_k_tags: 3,
            n_coalitions: DEFAULT_KERNEL_COALITIONS,
            interactions: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationBundle {
    pub instance: Vec<f64>,
    pub cells: Vec<String>,
    /// Known provenance of the row (1 real, 0 synthetic), if any.
    pub label: Option<u8>,
    pub score: f64,
    pub vectors: Vec<ShapleyVector>,
    pub interactions: Option<InteractionMatrix>,
    pub tags: Vec<ExplanationTag>,
}

/// Tags the strongest contributors toward the side the score falls on.
pub fn tag_contributors(
    vector: &ShapleyVector,
    score: f64,
    label: Option<u8>,
    margin: f64,
    top_k: usize,
) -> Vec<ExplanationTag> {
    let kind = if score < 0.5 - margin && label != Some(1) {
        TagKind::UnrealisticValue
    } else if score > 0.5 + margin && label != Some(0) {
        TagKind::Underrepresented
    } else {
        return Vec::new();
    };
    let sign = if kind == TagKind::UnrealisticValue { -1.0 } else { 1.0 };
    let mut order: Vec<usize> = (0..vector.values.len())
        .filter(|&j| sign * vector.values[j] > 1e-9)
        .collect();
    order.sort_by(|&a, &b| (sign * vector.values[b]).total_cmp(&(sign * vector.values[a])).then(a.cmp(&b)));
    order
        .into_iter()
        .take(top_k)
        .map(|j| {
            let feature = vector.features[j].clone();
            let description = match kind {
                TagKind::UnrealisticValue => format!("`{feature}` is an unrealistic value/combination"),
                TagKind::Underrepresented => format!("`{feature}` is underrepresented in synthetic data"),
            };
            ExplanationTag {
                feature,
                kind,
                engine: vector.engine,
                contribution: vector.values[j],
                description,
            }
        })
        .collect()
}

/// Runs the requested engines on one instance and attaches interpretation tags
/// derived from the first engine listed.
pub fn explain_instance(
    model: &TreeEnsembleModel,
    instance: &[f64],
    label: Option<u8>,
    background: &BackgroundSet,
    spec: &ValueFunctionSpec,
    config: &ExplainConfig,
) -> Result<ExplanationBundle> {
    let mut vectors = Vec::with_capacity(config.engines.len());
    for engine in &config.engines {
        vectors.push(match engine {
            Engine::Tree => tree_shap(model, instance)?,
            Engine::Exact => exact_shapley(model, instance, background, spec)?,
            Engine::Kernel => kernel_shap(
                model,
                instance,
                background,
                spec,
                config.n_coalitions,
                derive_seed(config.seed, &[0x4B]),
            )?,
        });
    }
    let interactions = if config.interactions {
        Some(tree_shap_interactions(model, instance)?)
    } else {
        None
    };
    let score = model.proba_row(instance);
    let tags = vectors
        .first()
        .map(|v| tag_contributors(v, score, label, config.tag_margin, config.top_k_tags))
        .unwrap_or_default();
    let schema = model.schema();
    Ok(ExplanationBundle {
        instance: instance.to_vec(),
        cells: instance.iter().enumerate().map(|(j, &v)| schema.format_cell(j, v)).collect(),
        label,
        score,
        vectors,
        interactions,
        tags,
    })
}
