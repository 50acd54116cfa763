//! Free-running decoding after training: count repeat and skip events on the
//! held-out split, and compare against the gold paths.
//!
//! ```bash
//! cargo run --release --example robustness
//! ```

use monoalign::align::{centroids, AlignConfig};
use monoalign::data::{Dataset, DatasetConfig};
use monoalign::model::{free_running_budget, ModelConfig};
use monoalign::train::{path_events, robustness_score, score_alignments, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Dataset::generate(&DatasetConfig {
        train: 300,
        val: 50,
        test: 50,
        ..DatasetConfig::default()
    })?;
    let d_max = data.table.max_duration();
    let gold: Vec<_> = data.test.iter().map(|e| e.gold_alignment.clone()).collect();
    println!("gold paths: {:?}", score_alignments(&gold, d_max));

    let model = ModelConfig::new(data.table.vocab_size(), data.table.frame_dim());
    for lambda in [0.0, 1e-3] {
        let config = TrainConfig {
            epochs: 20,
            align: AlignConfig { lambda, ..AlignConfig::default() },
            ..TrainConfig::default()
        };
        let log = train(&data, model, &config)?;
        let score = robustness_score(&log.final_params, &data.test, d_max)?;
        println!("lambda {lambda:e}: {score:?}");

        let ex = &data.test[0];
        let budget = free_running_budget(ex.tokens.len(), d_max);
        let (_, a) = log.final_params.decode_free_running(&ex.tokens, budget)?;
        let c = centroids(&a);
        let path: Vec<String> = c.as_slice().iter().map(|x| format!("{x:.1}")).collect();
        println!("  first test path: {}", path.join(" "));
        println!("  events: {:?}", path_events(c.as_slice(), d_max));
    }
    Ok(())
}
