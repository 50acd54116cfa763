//! A short λ sweep over a few seeds; the report is the same CSV that
//! `monoalign sweep` writes.
//!
//! ```bash
//! cargo run --release --example lambda_sweep
//! ```

use monoalign::data::{Dataset, DatasetConfig};
use monoalign::model::ModelConfig;
use monoalign::train::{sweep_lambda, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Dataset::generate(&DatasetConfig {
        train: 200,
        val: 40,
        test: 40,
        ..DatasetConfig::default()
    })?;
    let model = ModelConfig::new(data.table.vocab_size(), data.table.frame_dim());
    let base = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    let report = sweep_lambda(&data, model, &base, &[0.0, 1e-4, 1e-3, 1e-2], &[0, 1, 2], |run| {
        eprintln!("lambda {:e} seed {} finished", run.lambda, run.seed);
    })?;
    print!("{}", report.to_csv());
    Ok(())
}
