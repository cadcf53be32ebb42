//! Monte Carlo counterfactuals for rows the detector calls synthetic:
//! candidates are drawn from a tree-chain synthesizer conditioned on the
//! features left untouched, then filtered for validity and ranked by
//! sparsity and Gower distance.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, Schema};
use crate::detector::{Classifier, DECISION_THRESHOLD};
use crate::error::{Error, Result};
use crate::generator::ChainModel;
use crate::rng::rng_for;

pub const DEFAULT_CF_SAMPLES: usize = 100_000;
pub const DEFAULT_MAX_RETURNED: usize = 5;

/// Which features a candidate may redraw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStrategy {
    /// Every mutable feature is redrawn for every candidate.
    Full,
    /// Each candidate redraws a random nonempty subset of the mutable features.
    #[default]
    Subsets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MCCEConfig {
    pub n_samples: usize,
    pub immutable: Vec<String>,
    pub max_returned: usize,
    /// Per-feature Gower weights in schema order; equal weights when empty.
    pub distance_weights: Vec<f64>,
    pub strategy: CandidateStrategy,
    pub seed: u64,
}

impl Default for MCCEConfig {
    fn default() -> Self {
        MCCEConfig {
            n_samples: DEFAULT_CF_SAMPLES,
            immutable: Vec::new(),
            max_returned: DEFAULT_MAX_RETURNED,
            distance_weights: Vec::new(),
            strategy: CandidateStrategy::Subsets,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterfactualStatus {
    /// The query already scores above the threshold.
    AlreadyReal,
    Found,
    /// No candidate crossed the threshold.
    NoValidCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub values: Vec<f64>,
    pub cells: Vec<String>,
    pub changed: Vec<bool>,
    pub sparsity: usize,
    pub gower: f64,
    pub score: f64,
}

impl Counterfactual {
    pub fn changed_features<'a>(&self, names: &'a [String]) -> Vec<&'a str> {
        names
            .iter()
            .zip(&self.changed)
            .filter(|(_, &c)| c)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSet {
    pub status: CounterfactualStatus,
    pub features: Vec<String>,
    pub instance: Vec<f64>,
    pub instance_cells: Vec<String>,
    pub instance_score: f64,
    pub n_tried: usize,
    /// Distinct candidates that crossed the threshold.
    pub n_valid: usize,
    pub candidates: Vec<Counterfactual>,
}

impl CounterfactualSet {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Weighted mean of per-feature distances: `|a - b| / range` clamped to 1
/// for numeric features (0 when the range is empty), mismatch for
/// categorical ones.
pub fn gower_distance(
    a: &[f64],
    b: &[f64],
    schema: &Schema,
    ranges: &[Option<(f64, f64)>],
    weights: Option<&[f64]>,
) -> f64 {
    let p = schema.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..p {
        let w = weights.map_or(1.0, |w| w[j]);
        let d = match schema.column(j).kind {
            ColumnKind::Categorical => f64::from(a[j] != b[j]),
            ColumnKind::Numeric => match ranges[j] {
                Some((lo, hi)) if hi > lo => ((a[j] - b[j]).abs() / (hi - lo)).min(1.0),
                _ => 0.0,
            },
        };
        num += w * d;
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn cells(schema: &Schema, row: &[f64]) -> Vec<String> {
    row.iter().enumerate().map(|(j, &v)| schema.format_cell(j, v)).collect()
}

/// Candidate rows crossing the decision threshold, ranked by number of
/// changed features, then Gower distance, then closeness of the score to the
/// threshold.
pub fn generate_counterfactuals<C: Classifier + ?Sized>(
    model: &C,
    instance: &[f64],
    chain: &ChainModel,
    ranges: &[Option<(f64, f64)>],
    config: &MCCEConfig,
) -> Result<CounterfactualSet> {
    let schema = model.schema();
    let p = schema.len();
    if chain.schema.fingerprint() != schema.fingerprint() {
        return Err(Error::SchemaMismatch("synthesizer and detector schemas differ".into()));
    }
    if instance.len() != p || ranges.len() != p {
        return Err(Error::SchemaMismatch(format!(
            "instance has {} cells and {} ranges for {p} features",
            instance.len(),
            ranges.len()
        )));
    }
    if config.n_samples == 0 {
        return Err(Error::invalid("counterfactual search needs n_samples >= 1"));
    }
    let weights = match config.distance_weights.len() {
        0 => None,
        n if n == p && config.distance_weights.iter().all(|w| *w >= 0.0) => Some(config.distance_weights.as_slice()),
        _ => return Err(Error::invalid("distance weights must be nonnegative, one per feature")),
    };
    let mut immutable = vec![false; p];
    for name in &config.immutable {
        immutable[schema.require(name)?] = true;
    }
    let features = schema.names();
    let instance_score = model.proba_row(instance);
    let mut out = CounterfactualSet {
        status: CounterfactualStatus::Found,
        features,
        instance: instance.to_vec(),
        instance_cells: cells(schema, instance),
        instance_score,
        n_tried: 0,
        n_valid: 0,
        candidates: Vec::new(),
    };
    if instance_score > DECISION_THRESHOLD {
        out.status = CounterfactualStatus::AlreadyReal;
        out.n_valid = 1;
        out.candidates.push(Counterfactual {
            values: instance.to_vec(),
            cells: out.instance_cells.clone(),
            changed: vec![false; p],
            sparsity: 0,
            gower: 0.0,
            score: instance_score,
        });
        return Ok(out);
    }
    let mutable: Vec<usize> = (0..p).filter(|&j| !immutable[j]).collect();
    if mutable.is_empty() {
        return Err(Error::invalid("every feature is immutable; nothing can change"));
    }

    let draws: Vec<(Vec<f64>, f64)> = (0..config.n_samples)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = rng_for(config.seed, &[0xCF, i as u64]);
            let mut fixed: Vec<Option<f64>> = instance.iter().map(|&v| Some(v)).collect();
            match config.strategy {
                CandidateStrategy::Full => mutable.iter().for_each(|&j| fixed[j] = None),
                CandidateStrategy::Subsets => {
                    let k = rng.gen_range(1..=mutable.len());
                    for s in sample(&mut rng, mutable.len(), k).iter() {
                        fixed[mutable[s]] = None;
                    }
                }
            }
            let row = chain.sample_row(&fixed, &mut rng);
            let score = model.proba_row(&row);
            (score > DECISION_THRESHOLD).then_some((row, score))
        })
        .collect();
    out.n_tried = config.n_samples;

    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut ranked: Vec<Counterfactual> = Vec::new();
    for (row, score) in draws {
        if !seen.insert(row.iter().map(|v| v.to_bits()).collect()) {
            continue;
        }
        let changed: Vec<bool> = row.iter().zip(instance).map(|(a, b)| a != b).collect();
        ranked.push(Counterfactual {
            sparsity: changed.iter().filter(|&&c| c).count(),
            gower: gower_distance(&row, instance, schema, ranges, weights),
            cells: cells(schema, &row),
            changed,
            values: row,
            score,
        });
    }
    out.n_valid = ranked.len();
    ranked.sort_by(|a, b| {
        a.sparsity
            .cmp(&b.sparsity)
            .then(a.gower.total_cmp(&b.gower))
            .then((a.score - 0.5).abs().total_cmp(&(b.score - 0.5).abs()))
            .then_with(|| {
                a.values
                    .iter()
                    .zip(&b.values)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    ranked.truncate(config.max_returned);
    if ranked.is_empty() {
        out.status = CounterfactualStatus::NoValidCandidate;
    }
    out.candidates = ranked;
    Ok(out)
}
