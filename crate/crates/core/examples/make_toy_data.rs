//! Regenerates the bundled toy pair: correlated "real" rows and an
//! independent-marginals synthetic counterpart.
//!
//! `cargo run -p synaudit --example make_toy_data -- data`

use synaudit::generator::{baseline_synthesize, SamplerMode};
use synaudit::toy::correlated_toy;

const ROWS: usize = 5000;
const SEED: u64 = 2024;

fn main() -> synaudit::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    std::fs::create_dir_all(&dir).map_err(|e| synaudit::Error::io(&dir, e))?;
    let real = correlated_toy(ROWS, SEED);
    let synthetic = baseline_synthesize(&real, SamplerMode::Independent, ROWS, SEED)?;
    real.save_csv(format!("{dir}/toy_real.csv"))?;
    synthetic.save_csv(format!("{dir}/toy_synthetic.csv"))?;
    println!("wrote {ROWS} rows each to {dir}/toy_real.csv and {dir}/toy_synthetic.csv");
    Ok(())
}
