//! Seeded toy "real" data with known dependence structure.
//!
//! Columns:
//! - `age`: uniform on [17, 80].
//! - `edu`: years of schooling, capped by an age-dependent ceiling, so young
//!   rows never carry high values.
//! - `x1`, `x2`: standard normals with correlation 0.9.
//! - `group`: four categories with unequal frequencies.
//! - `x3`: normal around a group-specific mean.
//! - `noise`: independent standard normal.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{ColumnSchema, Provenance, Schema, TabularDataset};
use crate::rng::rng_for;

pub const TOY_GROUPS: [&str; 4] = ["A", "B", "C", "D"];
const GROUP_WEIGHTS: [f64; 4] = [0.4, 0.3, 0.2, 0.1];
const GROUP_MEANS: [f64; 4] = [-1.5, 0.0, 1.5, 3.0];

/// Column pairs that are dependent in the toy data.
pub const TOY_DEPENDENT_PAIRS: [(&str, &str); 3] = [("age", "edu"), ("x1", "x2"), ("group", "x3")];

pub fn toy_schema() -> Schema {
    Schema::new(vec![
        ColumnSchema::numeric("age"),
        ColumnSchema::numeric("edu"),
        ColumnSchema::numeric("x1"),
        ColumnSchema::numeric("x2"),
        ColumnSchema::categorical("group", TOY_GROUPS),
        ColumnSchema::numeric("x3"),
        ColumnSchema::numeric("noise"),
    ])
    .expect("toy schema is valid")
}

/// Upper bound of `edu` at a given age.
pub fn toy_edu_ceiling(age: f64) -> f64 {
    (4.0 + 0.6 * (age - 17.0)).min(18.0)
}

fn round_to(v: f64, step: f64) -> f64 {
    let per_unit = (1.0 / step).round();
    (v * per_unit).round() / per_unit
}

pub fn correlated_toy(n: usize, seed: u64) -> TabularDataset {
    let mut rng = rng_for(seed, &[0x70E]);
    let mut values = Vec::with_capacity(n * 7);
    for _ in 0..n {
        let z = |rng: &mut crate::rng::Rng| -> f64 { StandardNormal.sample(rng) };
        let age = round_to(rng.gen_range(17.0..80.0), 0.1);
        let edu_raw: f64 = (10.0 + 3.0 * z(&mut rng)).clamp(1.0, 18.0);
        let edu = round_to(edu_raw.min(toy_edu_ceiling(age)), 0.1);
        let x1 = z(&mut rng);
        let x2 = 0.9 * x1 + 0.19f64.sqrt() * z(&mut rng);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut g = GROUP_WEIGHTS.len() - 1;
        for (k, w) in GROUP_WEIGHTS.iter().enumerate() {
            acc += w;
            if u < acc {
                g = k;
                break;
            }
        }
        let x3 = GROUP_MEANS[g] + 0.5 * z(&mut rng);
        let noise = z(&mut rng);
        values.extend_from_slice(&[age, edu, x1, x2, g as f64, x3, noise]);
    }
    TabularDataset::new(toy_schema(), values, Provenance::Real).expect("toy values are finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::pearson;

    #[test]
    fn dependence_is_present() {
        let d = correlated_toy(4000, 1);
        let r = pearson(&d.column(2), &d.column(3)).unwrap();
        assert!((r - 0.9).abs() < 0.03, "{r}");
        let noise_r = pearson(&d.column(0), &d.column(6)).unwrap();
        assert!(noise_r.abs() < 0.06);
        for row in d.rows() {
            assert!(row[1] <= toy_edu_ceiling(row[0]) + 0.05 + 1e-9);
        }
        assert_eq!(d, correlated_toy(4000, 1));
    }
}
