use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::binomial;
use crate::rng::rng_for;

const MAX_ATTEMPTS: u64 = 5;

/// Kernel weight of a coalition of size `s` among `p` players.
pub fn shapley_kernel_weight(p: usize, s: usize) -> f64 {
    (p as f64 - 1.0) / (binomial(p, s) * s as f64 * (p - s) as f64)
}

fn all_masks_of_size(p: usize, s: usize) -> Vec<u64> {
    (0..(1u64 << p)).filter(|m| m.count_ones() as usize == s).collect()
}

/// Coalitions (excluding the empty and full ones) with their regression weights.
fn design(p: usize, budget: usize, seed: u64) -> BTreeMap<u64, f64> {
    let full = 1u64 << p;
    let mut out = BTreeMap::new();
    if budget as u128 + 2 >= full as u128 {
        for m in 1..full - 1 {
            out.insert(m, shapley_kernel_weight(p, m.count_ones() as usize));
        }
        return out;
    }

    // total kernel mass per size, normalized over sizes 1..p-1
    let n_sizes = p - 1;
    let n_paired = n_sizes.div_ceil(2);
    let size_mass: Vec<f64> = (1..p).map(|s| (p as f64 - 1.0) / (s as f64 * (p - s) as f64)).collect();
    let total_mass: f64 = size_mass.iter().sum();
    // mass of the size pair (s, p - s), indexed by s - 1 for s <= p / 2
    let mut pair_mass: Vec<f64> = (1..=n_paired)
        .map(|s| {
            let m = size_mass[s - 1] / total_mass;
            if s != p - s {
                2.0 * m
            } else {
                m
            }
        })
        .collect();

    let mut remaining = budget;
    let mut enumerated = 0;
    let mut remaining_mass = 1.0;
    for s in 1..=n_paired {
        let mut count = binomial(p, s) as usize;
        if s != p - s {
            count *= 2;
        }
        let share = pair_mass[s - 1] / remaining_mass;
        if (remaining as f64) * share + 1e-9 >= count as f64 {
            let per = pair_mass[s - 1] / count as f64;
            for m in all_masks_of_size(p, s) {
                out.insert(m, per);
                if s != p - s {
                    out.insert(!m & (full - 1), per);
                }
            }
            remaining -= count;
            remaining_mass -= pair_mass[s - 1];
            pair_mass[s - 1] = 0.0;
            enumerated = s;
        } else {
            break;
        }
    }

    if enumerated < n_paired && remaining >= 1 {
        let mut rng = rng_for(seed, &[0x4E5]);
        let sizes: Vec<usize> = (enumerated + 1..=n_paired).collect();
        let masses: Vec<f64> = sizes.iter().map(|&s| pair_mass[s - 1]).collect();
        let mass_sum: f64 = masses.iter().sum();
        let draw = |rng: &mut crate::rng::Rng| -> u64 {
            let mut u = rng.gen::<f64>() * mass_sum;
            let mut s = *sizes.last().expect("at least one size left");
            for (&size, &m) in sizes.iter().zip(&masses) {
                if u < m {
                    s = size;
                    break;
                }
                u -= m;
            }
            let mut m = 0u64;
            for j in sample(rng, p, s).iter() {
                m |= 1 << j;
            }
            // sizes are drawn from the smaller half; flip to cover the larger one
            if s != p - s && rng.gen_bool(0.5) {
                m = !m & (full - 1);
            }
            m
        };
        // a complement adds no new equation once efficiency is imposed, so
        // pairing only pays off when the budget leaves room for p - 1 pairs
        if remaining >= 2 * (p - 1) {
            // repeats add weight; drawing continues until enough distinct pairs are held
            let n_pairs = remaining / 2;
            let mut hits: BTreeMap<u64, f64> = BTreeMap::new();
            let mut tries = 0;
            while hits.len() < n_pairs && tries < 1000 * n_pairs {
                let m = draw(&mut rng);
                *hits.entry(m.min(!m & (full - 1))).or_insert(0.0) += 1.0;
                tries += 1;
            }
            let draws: f64 = hits.values().sum();
            for (m, count) in hits {
                let w = remaining_mass * count / (2.0 * draws);
                *out.entry(m).or_insert(0.0) += w;
                *out.entry(!m & (full - 1)).or_insert(0.0) += w;
            }
        } else {
            let mut picked: Vec<u64> = Vec::with_capacity(remaining);
            let mut tries = 0;
            while picked.len() < remaining && tries < 1000 * remaining {
                let m = draw(&mut rng);
                if !out.contains_key(&m) && !picked.contains(&m) {
                    picked.push(m);
                }
                tries += 1;
            }
            let per = remaining_mass / picked.len().max(1) as f64;
            for m in picked {
                out.insert(m, per);
            }
        }
    }
    out
}

fn solve(p: usize, coalitions: &[(u64, f64, f64)], v_empty: f64, v_full: f64, min_norm: bool) -> Option<Vec<f64>> {
    let delta = v_full - v_empty;
    let k = p - 1;
    let last = 1u64 << (p - 1);
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut atb = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for &(m, w, v) in coalitions {
        let z_last = f64::from(m & last != 0);
        for (j, r) in row.iter_mut().enumerate() {
            *r = f64::from(m >> j & 1 == 1) - z_last;
        }
        let target = v - v_empty - z_last * delta;
        for a in 0..k {
            if row[a] == 0.0 {
                continue;
            }
            atb[a] += w * row[a] * target;
            for b in 0..k {
                ata[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    let scale = ata.diagonal().amax();
    if !(scale > 0.0) {
        return None;
    }
    let svd = ata.clone().svd(true, true);
    let cutoff = scale * 1e-12;
    if !min_norm && svd.singular_values.min() <= cutoff {
        return None;
    }
    let sol = svd.solve(&atb, cutoff).ok()?;
    let mut phi: Vec<f64> = sol.iter().copied().collect();
    let rest: f64 = phi.iter().sum();
    phi.push(delta - rest);
    phi.iter().all(|x| x.is_finite()).then_some(phi)
}

/// KernelSHAP estimate for a `p`-player game. Uses every coalition when the
/// budget covers all `2^p` of them, otherwise fully enumerates the smallest
/// (and complementary largest) sizes the budget allows and samples the rest
/// in complementary pairs. A design that stays rank-deficient over every
/// redraw is solved in the minimum-norm least-squares sense. Efficiency holds
/// exactly by construction.
pub fn kernel_shap_with<V>(p: usize, value: V, n_coalitions: usize, seed: u64) -> Result<Vec<f64>>
where
    V: Fn(u64) -> f64 + Sync,
{
    if p == 0 {
        return Ok(Vec::new());
    }
    if n_coalitions < p + 2 {
        return Err(Error::invalid(format!(
            "kernel SHAP needs at least p + 2 = {} coalitions, got {n_coalitions}",
            p + 2
        )));
    }
    if p > 63 {
        return Err(Error::invalid("kernel SHAP supports at most 63 features"));
    }
    let full = (1u64 << p) - 1;
    let v_empty = value(0);
    let v_full = value(full);
    if p == 1 {
        return Ok(vec![v_full - v_empty]);
    }
    for attempt in 0..MAX_ATTEMPTS {
        let weights = design(p, n_coalitions - 2, crate::rng::derive_seed(seed, &[attempt]));
        let masks: Vec<(u64, f64)> = weights.into_iter().collect();
        let evaluated: Vec<(u64, f64, f64)> = masks.par_iter().map(|&(m, w)| (m, w, value(m))).collect();
        if let Some(phi) = solve(p, &evaluated, v_empty, v_full, attempt + 1 == MAX_ATTEMPTS) {
            return Ok(phi);
        }
    }
    Err(Error::Numerical(format!(
        "kernel SHAP produced no finite solution after {MAX_ATTEMPTS} coalition draws"
    )))
}
