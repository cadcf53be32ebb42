//! Sequential model-based hyperparameter search (tree-structured Parzen
//! estimators) maximizing cross-validated AUC of the boosted detector.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbdt::{fit_gbdt, TrainConfig};
use super::model::Classifier;
use crate::dataset::{DetectionDataset, Split};
use crate::error::{Error, Result};
use crate::math::auc;
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    Tpe,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    pub budget: usize,
    pub n_folds: usize,
    pub strategy: SearchStrategy,
    /// Fraction of finished trials forming the "good" density.
    pub gamma: f64,
    pub n_candidates: usize,
    pub n_startup: usize,
    /// Non-searched settings (early stopping, bins, L1, column sampling) come from here.
    pub base: TrainConfig,
    pub seed: u64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            budget: 20,
            n_folds: 3,
            strategy: SearchStrategy::Tpe,
            gamma: 0.25,
            n_candidates: 24,
            n_startup: 10,
            base: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: TrainConfig,
    /// Mean held-out AUC across folds; `None` when fitting failed.
    pub cv_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: TrainConfig,
    pub best_cv_auc: f64,
    pub trials: Vec<Trial>,
}

#[derive(Clone, Copy)]
struct Dim {
    lo: f64,
    hi: f64,
    log: bool,
    integer: bool,
}

impl Dim {
    fn to_internal(self, v: f64) -> f64 {
        if self.log {
            v.ln()
        } else {
            v
        }
    }

    fn bounds(self) -> (f64, f64) {
        (self.to_internal(self.lo), self.to_internal(self.hi))
    }

    fn from_internal(self, u: f64) -> f64 {
        let v = if self.log { u.exp() } else { u };
        let v = v.clamp(self.lo, self.hi);
        if self.integer {
            v.round()
        } else {
            v
        }
    }
}

const SPACE: [Dim; 6] = [
    // max_depth
    Dim { lo: 2.0, hi: 10.0, log: false, integer: true },
    // learning_rate
    Dim { lo: 0.01, hi: 0.3, log: true, integer: false },
    // n_trees
    Dim { lo: 50.0, hi: 1000.0, log: false, integer: true },
    // l2
    Dim { lo: 0.0, hi: 10.0, log: false, integer: false },
    // min_child_weight
    Dim { lo: 1.0, hi: 20.0, log: false, integer: false },
    // subsample
    Dim { lo: 0.5, hi: 1.0, log: false, integer: false },
];

fn to_config(point: &[f64], base: &TrainConfig) -> TrainConfig {
    let v: Vec<f64> = point.iter().zip(SPACE).map(|(&u, d)| d.from_internal(u)).collect();
    TrainConfig {
        max_depth: v[0] as usize,
        learning_rate: v[1],
        n_trees: v[2] as usize,
        l2: v[3],
        min_child_weight: v[4],
        subsample: v[5],
        ..base.clone()
    }
}

fn to_point(c: &TrainConfig) -> Vec<f64> {
    let raw = [
        c.max_depth as f64,
        c.learning_rate,
        c.n_trees as f64,
        c.l2,
        c.min_child_weight,
        c.subsample,
    ];
    raw.iter().zip(SPACE).map(|(&v, d)| d.to_internal(v)).collect()
}

fn uniform_point(rng: &mut Rng) -> Vec<f64> {
    SPACE
        .iter()
        .map(|d| {
            let (a, b) = d.bounds();
            rng.gen_range(a..=b)
        })
        .collect()
}

/// One-dimensional Parzen estimator: Gaussians at the observations plus a
/// flat prior over the range.
struct Parzen {
    centers: Vec<f64>,
    sigma: f64,
    lo: f64,
    hi: f64,
}

impl Parzen {
    fn new(centers: Vec<f64>, lo: f64, hi: f64) -> Parzen {
        let width = hi - lo;
        let n = centers.len().max(1) as f64;
        let sigma = (width * n.powf(-0.2)).max(width / 20.0);
        Parzen { centers, sigma, lo, hi }
    }

    fn density(&self, x: f64) -> f64 {
        let width = self.hi - self.lo;
        let k = (self.centers.len() + 1) as f64;
        let norm = 1.0 / (self.sigma * (2.0 * std::f64::consts::PI).sqrt());
        let gauss: f64 = self
            .centers
            .iter()
            .map(|c| norm * (-0.5 * ((x - c) / self.sigma).powi(2)).exp())
            .sum();
        let flat = if (self.lo..=self.hi).contains(&x) { 1.0 / width } else { 0.0 };
        (gauss + flat) / k
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        let pick = rng.gen_range(0..=self.centers.len());
        if pick == self.centers.len() {
            return rng.gen_range(self.lo..=self.hi);
        }
        let c = self.centers[pick];
        let normal = Normal::new(c, self.sigma).expect("positive bandwidth");
        for _ in 0..16 {
            let x = normal.sample(rng);
            if (self.lo..=self.hi).contains(&x) {
                return x;
            }
        }
        c
    }
}

fn tpe_point(history: &[(Vec<f64>, f64)], cfg: &TunerConfig, rng: &mut Rng) -> Vec<f64> {
    let mut ranked: Vec<&(Vec<f64>, f64)> = history.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let n_good = ((cfg.gamma * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len() - 1);
    let (good, bad) = ranked.split_at(n_good);
    let models: Vec<(Parzen, Parzen)> = SPACE
        .iter()
        .enumerate()
        .map(|(d, dim)| {
            let (lo, hi) = dim.bounds();
            (
                Parzen::new(good.iter().map(|h| h.0[d]).collect(), lo, hi),
                Parzen::new(bad.iter().map(|h| h.0[d]).collect(), lo, hi),
            )
        })
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..cfg.n_candidates.max(1) {
        let x: Vec<f64> = models.iter().map(|(l, _)| l.sample(rng)).collect();
        let score: f64 = models
            .iter()
            .zip(&x)
            .map(|((l, g), &v)| l.density(v).ln() - g.density(v).ln())
            .sum();
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, x));
        }
    }
    best.expect("at least one candidate").1
}

fn stratified_folds(d: &DetectionDataset, rows: &[usize], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    for label in [0u8, 1u8] {
        let mut idx: Vec<usize> = rows.iter().copied().filter(|&r| d.labels[r] == label).collect();
        idx.shuffle(&mut rng_for(seed, &[0xF01D, label as u64]));
        for (i, r) in idx.into_iter().enumerate() {
            folds[i % k].push(r);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

fn cv_auc(d: &DetectionDataset, folds: &[Vec<usize>], config: &TrainConfig) -> Option<f64> {
    let scores: Vec<Option<f64>> = (0..folds.len())
        .into_par_iter()
        .map(|k| {
            let mut split = vec![Split::Test; d.n_rows()];
            let mut used = vec![false; d.n_rows()];
            for (j, f) in folds.iter().enumerate() {
                for &r in f {
                    used[r] = true;
                    if j != k {
                        split[r] = Split::Train;
                    }
                }
            }
            let mut fold_data = d.clone();
            // rows outside the tuning pool are neither trained on nor scored
            let keep: Vec<usize> = (0..d.n_rows()).filter(|&r| used[r]).collect();
            fold_data.split = Some(split);
            let fold_data = fold_data.select(&keep);
            let model = fit_gbdt(&fold_data, config).ok()?;
            let test = fold_data.indices(Split::Test).ok()?;
            let s: Vec<f64> = test.iter().map(|&r| model.proba_row(fold_data.data.row(r))).collect();
            let y: Vec<u8> = test.iter().map(|&r| fold_data.labels[r]).collect();
            auc(&s, &y)
        })
        .collect();
    let vals: Option<Vec<f64>> = scores.into_iter().collect();
    vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn tune_with(train: &DetectionDataset, cfg: &TunerConfig) -> Result<TuneResult> {
    if cfg.budget == 0 {
        return Err(Error::invalid("tuning budget must be at least 1"));
    }
    if cfg.n_folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        return Err(Error::invalid("gamma must lie in (0, 1)"));
    }
    let rows = match &train.split {
        Some(_) => train.indices(Split::Train)?,
        None => (0..train.n_rows()).collect(),
    };
    let folds = stratified_folds(train, &rows, cfg.n_folds, cfg.seed);
    let base = TrainConfig {
        seed: cfg.seed,
        ..cfg.base.clone()
    };
    let mut rng = rng_for(cfg.seed, &[0x7E5]);
    let mut trials = Vec::with_capacity(cfg.budget);
    let mut history: Vec<(Vec<f64>, f64)> = Vec::new();
    for _ in 0..cfg.budget {
        let point = if cfg.strategy == SearchStrategy::Random || history.len() < cfg.n_startup.max(2) {
            uniform_point(&mut rng)
        } else {
            tpe_point(&history, cfg, &mut rng)
        };
        let config = to_config(&point, &base);
        let score = cv_auc(train, &folds, &config);
        if let Some(s) = score {
            history.push((to_point(&config), s));
        }
        trials.push(Trial { config, cv_auc: score });
    }
    let (best, best_cv_auc) = trials
        .iter()
        .filter_map(|t| t.cv_auc.map(|s| (t, s)))
        .fold(None::<(&Trial, f64)>, |acc, (t, s)| match acc {
            Some((_, b)) if b >= s => acc,
            _ => Some((t, s)),
        })
        .ok_or_else(|| Error::Numerical("every tuning trial failed".into()))?;
    Ok(TuneResult {
        best: best.config.clone(),
        best_cv_auc,
        trials,
    })
}

/// Best configuration found within `budget` trials.
pub fn tune(train: &DetectionDataset, budget: usize, seed: u64) -> Result<TrainConfig> {
    tune_with(
        train,
        &TunerConfig {
            budget,
            seed,
            ..TunerConfig::default()
        },
    )
    .map(|r| r.best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn internal_space_roundtrips() {
        let c = TrainConfig {
            max_depth: 4,
            learning_rate: 0.05,
            n_trees: 300,
            l2: 2.5,
            min_child_weight: 3.0,
            subsample: 0.8,
            ..TrainConfig::default()
        };
        let back = to_config(&to_point(&c), &c);
        assert_eq!(back.max_depth, 4);
        assert_eq!(back.n_trees, 300);
        assert!((back.learning_rate - 0.05).abs() < 1e-12);
    }

    #[test]
    fn parzen_density_integrates_to_one() {
        let p = Parzen::new(vec![0.2, 0.9], 0.0, 1.0);
        let n = 200_000;
        let mass: f64 = (0..n).map(|i| p.density(-8.0 + 17.0 * (i as f64 + 0.5) / n as f64)).sum::<f64>() * 17.0 / n as f64;
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    }

    #[test]
    fn sampled_points_stay_in_range() {
        let mut rng = rng_for(1, &[]);
        for _ in 0..200 {
            let c = to_config(&uniform_point(&mut rng), &TrainConfig::default());
            assert!(c.validate().is_ok());
            assert!((2..=10).contains(&c.max_depth));
            assert!((50..=1000).contains(&c.n_trees));
            assert!((0.01..=0.3).contains(&c.learning_rate));
        }
    }
}
