//! Feature effects of the detector: evaluation grids, ICE curves, partial
//! dependence with flagged regions, per-category effect summaries and
//! real/synthetic marginal annotations.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{is_known_code, ColumnKind, DetectionDataset, TabularDataset};
use crate::detector::Classifier;
use crate::error::{Error, Result};
use crate::math::{quantile_sorted, sorted_copy};
use crate::rng::rng_for;

pub const DEFAULT_GRID_RESOLUTION: usize = 30;
pub const DEFAULT_ICE_SAMPLE: usize = 200;
pub const DEFAULT_FLAG_DELTA: f64 = 0.05;
const MAX_HISTOGRAM_BINS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[default]
    Quantile,
    Uniform,
    Categories,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub feature: String,
    pub feature_index: usize,
    pub kind: GridKind,
    /// Feature values, or category codes for categorical grids.
    pub points: Vec<f64>,
    /// Category labels aligned with `points`; empty for numeric grids.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    /// Set when a numeric feature takes a single value.
    #[serde(default)]
    pub constant: bool,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point_label(&self, g: usize) -> String {
        match self.labels.get(g) {
            Some(l) => l.clone(),
            None => format!("{}", self.points[g]),
        }
    }
}

/// Smallest observed value whose empirical CDF reaches `prob`.
fn observed_quantile(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    let k = ((prob * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Default quantile grid for a feature.
pub fn make_grid(d: &TabularDataset, feature: &str, resolution: usize) -> Result<Grid> {
    make_grid_with(d, feature, resolution, GridKind::Quantile)
}

/// Quantile grids take observed values only, so integer-valued data yields
/// integer grid points. Categorical features always get a category grid in
/// decreasing frequency order.
pub fn make_grid_with(d: &TabularDataset, feature: &str, resolution: usize, kind: GridKind) -> Result<Grid> {
    let j = d.schema().require(feature)?;
    if d.is_empty() {
        return Err(Error::Empty(format!("no rows to build a grid for `{feature}`")));
    }
    let col = d.schema().column(j);
    if col.kind == ColumnKind::Categorical {
        let k = col.n_categories();
        let mut counts = vec![0usize; k];
        for v in d.column(j) {
            if is_known_code(v, k) {
                counts[v as usize] += 1;
            }
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        if order.is_empty() {
            return Err(Error::invalid(format!("categorical feature `{feature}` has no categories")));
        }
        return Ok(Grid {
            feature: feature.to_string(),
            feature_index: j,
            kind: GridKind::Categories,
            points: order.iter().map(|&c| c as f64).collect(),
            labels: order.iter().map(|&c| col.categories[c].clone()).collect(),
            constant: false,
        });
    }
    if resolution < 2 {
        return Err(Error::invalid(format!("grid resolution must be at least 2, got {resolution}")));
    }
    let sorted = sorted_copy(&d.column(j));
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let mut points: Vec<f64> = match kind {
        GridKind::Uniform => (0..resolution)
            .map(|k| lo + (hi - lo) * k as f64 / (resolution - 1) as f64)
            .collect(),
        _ => (0..resolution)
            .map(|k| observed_quantile(&sorted, k as f64 / (resolution - 1) as f64))
            .collect(),
    };
    points.dedup();
    Ok(Grid {
        feature: feature.to_string(),
        feature_index: j,
        kind: if kind == GridKind::Categories {
            GridKind::Quantile
        } else {
            kind
        },
        constant: points.len() == 1,
        points,
        labels: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IceCurve {
    pub row: usize,
    /// 1 for real rows, 0 for synthetic ones.
    pub label: u8,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    /// Partial dependence well below one half: values typical of synthetic rows only.
    UnrealisticSynthetic,
    /// Partial dependence well above one half: values the generator rarely produces.
    Underrepresented,
}

/// Run of consecutive grid points sharing a flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedRegion {
    pub kind: RegionKind,
    pub first: usize,
    pub last: usize,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub real_density: Vec<f64>,
    pub synthetic_density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShares {
    pub categories: Vec<String>,
    pub real: Vec<f64>,
    pub synthetic: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginals {
    Numeric(Histogram),
    Categorical(CategoryShares),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectResult {
    pub grid: Grid,
    pub ice: Vec<IceCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdp: Option<Vec<f64>>,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub flags: Vec<FlaggedRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginals: Option<Marginals>,
    /// Indices into `ice` chosen for plotting.
    #[serde(default)]
    pub plot_curves: Vec<usize>,
}

impl EffectResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Label-stratified sample of row indices, proportional to class sizes,
/// returned sorted.
pub fn stratified_rows(labels: &[u8], n: usize, seed: u64) -> Vec<usize> {
    if n >= labels.len() {
        return (0..labels.len()).collect();
    }
    let groups: Vec<Vec<usize>> = [0u8, 1u8]
        .iter()
        .map(|&l| (0..labels.len()).filter(|&i| labels[i] == l).collect())
        .collect();
    let total = labels.len() as f64;
    let exact: Vec<f64> = groups.iter().map(|g| n as f64 * g.len() as f64 / total).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut short = n - take.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..2).collect();
    by_remainder.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &g in &by_remainder {
        if short == 0 {
            break;
        }
        if take[g] < groups[g].len() {
            take[g] += 1;
            short -= 1;
        }
    }
    let mut out = Vec::with_capacity(n);
    for (g, rows) in groups.into_iter().enumerate() {
        let mut rows = rows;
        rows.shuffle(&mut rng_for(seed, &[0x1CE, g as u64]));
        out.extend_from_slice(&rows[..take[g]]);
    }
    out.sort_unstable();
    out
}

/// ICE curves for a label-stratified sample of rows (all rows when
/// `instance_sample` is `None`).
pub fn ice<C: Classifier + ?Sized>(
    model: &C,
    d: &DetectionDataset,
    grid: &Grid,
    instance_sample: Option<usize>,
    seed: u64,
) -> Result<EffectResult> {
    model.check_schema(&d.data)?;
    if grid.feature_index >= d.data.n_cols() || d.data.schema().column(grid.feature_index).name != grid.feature {
        return Err(Error::SchemaMismatch(format!("grid feature `{}` not found at its index", grid.feature)));
    }
    if let Some(k) = instance_sample {
        if k > d.n_rows() {
            return Err(Error::invalid(format!(
                "instance sample {k} exceeds the {} available rows",
                d.n_rows()
            )));
        }
    }
    let rows = match instance_sample {
        Some(k) => stratified_rows(&d.labels, k, seed),
        None => (0..d.n_rows()).collect(),
    };
    let j = grid.feature_index;
    let ice: Vec<IceCurve> = rows
        .par_iter()
        .map(|&i| {
            let mut row = d.data.row(i).to_vec();
            let values = grid
                .points
                .iter()
                .map(|&v| {
                    row[j] = v;
                    model.proba_row(&row)
                })
                .collect();
            IceCurve {
                row: i,
                label: d.labels[i],
                values,
            }
        })
        .collect();
    Ok(EffectResult {
        grid: grid.clone(),
        plot_curves: (0..ice.len()).collect(),
        ice,
        pdp: None,
        delta: 0.0,
        flags: Vec::new(),
        marginals: None,
    })
}

fn flag_regions(grid: &Grid, pdp: &[f64], delta: f64) -> Vec<FlaggedRegion> {
    let kind_at = |g: usize| {
        if pdp[g] < 0.5 - delta {
            Some(RegionKind::UnrealisticSynthetic)
        } else if pdp[g] > 0.5 + delta {
            Some(RegionKind::Underrepresented)
        } else {
            None
        }
    };
    let mut out: Vec<FlaggedRegion> = Vec::new();
    // categories have no order, so every point stands alone
    let merge = grid.kind != GridKind::Categories;
    for g in 0..pdp.len() {
        let Some(kind) = kind_at(g) else { continue };
        match out.last_mut() {
            Some(r) if merge && r.kind == kind && r.last + 1 == g => {
                r.last = g;
                r.to = grid.points[g];
            }
            _ => out.push(FlaggedRegion {
                kind,
                first: g,
                last: g,
                from: grid.points[g],
                to: grid.points[g],
            }),
        }
    }
    out
}

/// Fills the partial dependence as the pointwise mean of the ICE curves and
/// flags points beyond `0.5 +- delta`.
pub fn pdp(mut effect: EffectResult, delta: f64) -> Result<EffectResult> {
    if effect.ice.is_empty() {
        return Err(Error::Empty("no ICE curves to average".into()));
    }
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::invalid(format!("flag delta must lie in [0, 0.5), got {delta}")));
    }
    let g = effect.grid.len();
    let n = effect.ice.len() as f64;
    let mut sums = vec![0.0; g];
    for c in &effect.ice {
        for (s, v) in sums.iter_mut().zip(&c.values) {
            *s += v;
        }
    }
    let curve: Vec<f64> = sums.into_iter().map(|s| s / n).collect();
    effect.flags = flag_regions(&effect.grid, &curve, delta);
    effect.pdp = Some(curve);
    effect.delta = delta;
    Ok(effect)
}

/// Histogram bin edges by the Freedman-Diaconis rule, with Sturges' rule
/// when the interquartile range vanishes.
pub fn histogram_edges(values: &[f64]) -> Vec<f64> {
    let sorted = sorted_copy(values);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi <= lo {
        return vec![lo - 0.5, lo + 0.5];
    }
    let n = sorted.len() as f64;
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let bins = if iqr > 0.0 {
        ((hi - lo) / (2.0 * iqr * n.powf(-1.0 / 3.0))).ceil() as usize
    } else {
        n.log2().ceil() as usize + 1
    }
    .clamp(1, MAX_HISTOGRAM_BINS);
    (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect()
}

fn density(values: &[f64], edges: &[f64]) -> Vec<f64> {
    let bins = edges.len() - 1;
    let mut counts = vec![0.0; bins];
    for &v in values {
        let b = edges.partition_point(|&e| e <= v).saturating_sub(1).min(bins - 1);
        counts[b] += 1.0;
    }
    let n = values.len().max(1) as f64;
    counts
        .iter()
        .zip(edges.windows(2))
        .map(|(c, w)| c / (n * (w[1] - w[0])))
        .collect()
}

/// Real and synthetic distributions of one feature on shared bins or categories.
pub fn marginals(d: &DetectionDataset, feature_index: usize) -> Result<Marginals> {
    if d.n_rows() == 0 {
        return Err(Error::Empty("no rows for marginal distributions".into()));
    }
    let col = d.data.schema().column(feature_index);
    let split = |label: u8| -> Vec<f64> {
        (0..d.n_rows())
            .filter(|&i| d.labels[i] == label)
            .map(|i| d.data.get(i, feature_index))
            .collect()
    };
    let (real, syn) = (split(1), split(0));
    Ok(match col.kind {
        ColumnKind::Numeric => {
            let edges = histogram_edges(&d.data.column(feature_index));
            Marginals::Numeric(Histogram {
                real_density: density(&real, &edges),
                synthetic_density: density(&syn, &edges),
                edges,
            })
        }
        ColumnKind::Categorical => {
            let k = col.n_categories();
            let shares = |vals: &[f64]| -> Vec<f64> {
                let mut c = vec![0.0; k];
                for &v in vals {
                    if is_known_code(v, k) {
                        c[v as usize] += 1.0;
                    }
                }
                let n = vals.len().max(1) as f64;
                c.into_iter().map(|x| x / n).collect()
            };
            Marginals::Categorical(CategoryShares {
                categories: col.categories.clone(),
                real: shares(&real),
                synthetic: shares(&syn),
            })
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectConfig {
    pub resolution: usize,
    pub grid: GridKind,
    /// Rows swept into ICE curves, stratified by label; every row when unset.
    pub instance_sample: Option<usize>,
    /// Curves kept for plotting; the partial dependence uses every ICE curve.
    pub plot_sample: usize,
    pub delta: f64,
    pub seed: u64,
}

impl Default for EffectConfig {
    fn default() -> Self {
        EffectConfig {
            resolution: DEFAULT_GRID_RESOLUTION,
            grid: GridKind::Quantile,
            instance_sample: None,
            plot_sample: DEFAULT_ICE_SAMPLE,
            delta: DEFAULT_FLAG_DELTA,
            seed: 0,
        }
    }
}

/// Grid on the pooled rows, ICE for every (or a stratified sample of) row, partial dependence, flags,
/// marginals and a stratified subset of curves for plotting.
pub fn feature_effect<C: Classifier + ?Sized>(
    model: &C,
    d: &DetectionDataset,
    feature: &str,
    config: &EffectConfig,
) -> Result<EffectResult> {
    let grid = make_grid_with(&d.data, feature, config.resolution, config.grid)?;
    let sample = config.instance_sample.map(|k| k.min(d.n_rows()));
    let mut effect = pdp(ice(model, d, &grid, sample, config.seed)?, config.delta)?;
    effect.marginals = Some(marginals(d, grid.feature_index)?);
    let curve_labels: Vec<u8> = effect.ice.iter().map(|c| c.label).collect();
    effect.plot_curves = stratified_rows(&curve_labels, config.plot_sample, config.seed);
    Ok(effect)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Self {
        let s = sorted_copy(values);
        FiveNumber {
            min: s[0],
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEffect {
    pub category: String,
    pub pdp: f64,
    pub ice_summary: FiveNumber,
    pub real_share: f64,
    pub synthetic_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalEffect {
    pub feature: String,
    pub classes: Vec<ClassEffect>,
    pub effect: EffectResult,
}

/// Per-category spread of ICE values, partial dependence and real versus
/// synthetic class shares.
pub fn categorical_effect<C: Classifier + ?Sized>(
    model: &C,
    d: &DetectionDataset,
    feature: &str,
    instance_sample: Option<usize>,
    delta: f64,
    seed: u64,
) -> Result<CategoricalEffect> {
    let j = d.data.schema().require(feature)?;
    if d.data.schema().column(j).kind != ColumnKind::Categorical {
        return Err(Error::invalid(format!("feature `{feature}` is not categorical")));
    }
    let grid = make_grid_with(&d.data, feature, 2, GridKind::Categories)?;
    let mut effect = pdp(ice(model, d, &grid, instance_sample, seed)?, delta)?;
    effect.marginals = Some(marginals(d, j)?);
    Ok(CategoricalEffect {
        feature: feature.to_string(),
        classes: class_effects(&effect)?,
        effect,
    })
}

/// Per-category summary of a finished effect on a category grid.
pub fn class_effects(effect: &EffectResult) -> Result<Vec<ClassEffect>> {
    if effect.grid.kind != GridKind::Categories {
        return Err(Error::invalid(format!("`{}` was not swept over categories", effect.grid.feature)));
    }
    let curve = effect
        .pdp
        .as_ref()
        .ok_or_else(|| Error::invalid("partial dependence not computed"))?;
    let Some(Marginals::Categorical(shares)) = &effect.marginals else {
        return Err(Error::invalid("category shares missing"));
    };
    if effect.ice.is_empty() {
        return Err(Error::Empty("no ICE curves".into()));
    }
    Ok((0..effect.grid.len())
        .map(|g| {
            let code = effect.grid.points[g] as usize;
            let vals: Vec<f64> = effect.ice.iter().map(|c| c.values[g]).collect();
            ClassEffect {
                category: effect.grid.labels[g].clone(),
                pdp: curve[g],
                ice_summary: FiveNumber::of(&vals),
                real_share: shares.real[code],
                synthetic_share: shares.synthetic[code],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observed_quantiles_pick_data_points() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(observed_quantile(&s, 0.0), 1.0);
        assert_eq!(observed_quantile(&s, 0.5), 2.0);
        assert_eq!(observed_quantile(&s, 0.51), 3.0);
        assert_eq!(observed_quantile(&s, 1.0), 4.0);
    }

    #[test]
    fn stratified_sample_keeps_class_shares() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i < 30)).collect();
        let rows = stratified_rows(&labels, 10, 1);
        assert_eq!(rows.len(), 10);
        assert_eq!(rows.iter().filter(|&&r| labels[r] == 1).count(), 3);
        assert_eq!(rows, stratified_rows(&labels, 10, 1));
    }

    #[test]
    fn freedman_diaconis_width() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let e = histogram_edges(&v);
        // IQR = 0.5, n^(-1/3) = 0.1, width = 0.1
        assert_eq!(e.len(), 11);
        let d = density(&v, &e);
        let mass: f64 = d.iter().zip(e.windows(2)).map(|(d, w)| d * (w[1] - w[0])).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regions_merge_on_ordered_grids_only() {
        let mut grid = Grid {
            feature: "x".into(),
            feature_index: 0,
            kind: GridKind::Quantile,
            points: vec![0.0, 1.0, 2.0, 3.0],
            labels: vec![],
            constant: false,
        };
        let pdp = [0.2, 0.3, 0.5, 0.9];
        let f = flag_regions(&grid, &pdp, 0.05);
        assert_eq!(f.len(), 2);
        assert_eq!((f[0].first, f[0].last, f[0].kind), (0, 1, RegionKind::UnrealisticSynthetic));
        assert_eq!(f[1].kind, RegionKind::Underrepresented);
        grid.kind = GridKind::Categories;
        assert_eq!(flag_regions(&grid, &pdp, 0.05).len(), 3);
    }
}
