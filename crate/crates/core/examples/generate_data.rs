//! Draw a small synthetic corpus and look at one example and its gold
//! alignment.
//!
//! ```bash
//! cargo run --example generate_data
//! ```

use monoalign::align::monotonicity_report;
use monoalign::data::{Dataset, DatasetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = DatasetConfig {
        train: 50,
        val: 10,
        test: 10,
        seed: 11,
        ..DatasetConfig::default()
    };
    let data = Dataset::generate(&config)?;
    println!("symbol durations: {:?}", data.table.durations);
    println!(
        "closest prototype pair: {:.3}",
        data.table.min_prototype_distance()
    );

    let ex = &data.train[0];
    println!("\ntokens {:?} -> {} frames", ex.tokens, ex.n_frames());
    let gold = &ex.gold_alignment;
    for i in 0..gold.n_inputs() {
        let row: String = (0..gold.n_frames())
            .map(|j| if gold.get(i, j) > 0.5 { '#' } else { '.' })
            .collect();
        println!("  {row}");
    }
    let report = monotonicity_report(gold, 0.01)?;
    // repeated frames of one token share a centroid, so each costs δ/M
    println!(
        "gold: loss {:.5}, {} margin violations",
        report.loss, report.violation_count
    );

    let lengths: Vec<usize> = data.train.iter().map(|e| e.n_frames()).collect();
    println!(
        "\ntrain frames per example: min {}, max {}",
        lengths.iter().min().unwrap(),
        lengths.iter().max().unwrap()
    );
    Ok(())
}
