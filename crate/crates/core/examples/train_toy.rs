//! Train the toy attention model with and without the alignment term and
//! print the per-epoch log side by side.
//!
//! ```bash
//! cargo run --release --example train_toy -- 30 1e-3
//! ```

use monoalign::align::AlignConfig;
use monoalign::data::{Dataset, DatasetConfig};
use monoalign::model::ModelConfig;
use monoalign::train::{first_monotonic_epoch, train, TrainConfig, MONOTONIC_THRESHOLD};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30);
    let lambda: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1e-3);

    let data = Dataset::generate(&DatasetConfig {
        train: 300,
        val: 50,
        test: 50,
        ..DatasetConfig::default()
    })?;
    let model = ModelConfig::new(data.table.vocab_size(), data.table.frame_dim());

    let mut logs = Vec::new();
    for lambda in [0.0, lambda] {
        let config = TrainConfig {
            epochs,
            align: AlignConfig { lambda, ..AlignConfig::default() },
            ..TrainConfig::default()
        };
        logs.push(train(&data, model, &config)?);
    }

    println!("epoch | val_lt  violations (λ=0) | val_lt  violations (λ={lambda:e})");
    for (a, b) in logs[0].records.iter().zip(&logs[1].records) {
        println!(
            "{:>5} | {:.4}  {:.3}            | {:.4}  {:.3}",
            a.epoch, a.val_lt, a.val_violation_rate, b.val_lt, b.val_violation_rate
        );
    }
    for (name, log) in ["baseline", "regularized"].iter().zip(&logs) {
        println!(
            "{name}: first epoch with violation rate <= {MONOTONIC_THRESHOLD}: {}",
            first_monotonic_epoch(log, MONOTONIC_THRESHOLD)
        );
    }
    Ok(())
}
