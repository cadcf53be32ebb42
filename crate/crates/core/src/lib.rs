pub mod cart;
pub mod counterfactual;
pub mod dataset;
pub mod detector;
pub mod effects;
pub mod error;
pub mod generator;
pub mod importance;
pub mod math;
pub mod report;
pub mod rng;
pub mod shapley;
pub mod toy;
pub mod tree;

pub use error::{Error, Result};
