use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::binomial;

pub const DEFAULT_EXACT_LIMIT: usize = 12;

/// Shapley values of a `p`-player game by full enumeration. `value` maps a
/// coalition bitmask (bit j set = feature j present) to its worth.
pub fn exact_shapley_with<V>(p: usize, value: V) -> Result<Vec<f64>>
where
    V: Fn(u64) -> f64 + Sync,
{
    if p > 25 {
        return Err(Error::invalid(format!("{p} players is too many for full enumeration")));
    }
    let n_masks = 1usize << p;
    let worth: Vec<f64> = (0..n_masks as u64).into_par_iter().map(&value).collect();
    // weight for a coalition of size s not containing j: s!(p-s-1)!/p!
    let weights: Vec<f64> = (0..p)
        .map(|s| 1.0 / (p as f64 * binomial(p - 1, s)))
        .collect();
    Ok((0..p)
        .map(|j| {
            let bit = 1u64 << j;
            let mut acc = 0.0;
            for mask in 0..n_masks as u64 {
                if mask & bit == 0 {
                    let s = mask.count_ones() as usize;
                    acc += weights[s] * (worth[(mask | bit) as usize] - worth[mask as usize]);
                }
            }
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glove_game() {
        // players 0 and 1 own left gloves, player 2 a right glove
        let v = |m: u64| -> f64 {
            let left = (m & 1 != 0) || (m & 2 != 0);
            let right = m & 4 != 0;
            f64::from(left && right)
        };
        let phi = exact_shapley_with(3, v).unwrap();
        assert!((phi[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((phi[1] - 1.0 / 6.0).abs() < 1e-12);
        assert!((phi[2] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn additive_game_returns_its_terms() {
        let terms = [1.5, -2.0, 0.25, 4.0];
        let v = |m: u64| -> f64 { (0..4).filter(|j| m >> j & 1 == 1).map(|j| terms[j]).sum() };
        let phi = exact_shapley_with(4, v).unwrap();
        for (a, b) in phi.iter().zip(terms) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
