//! Monotonicity diagnostics on a few hand-built attention matrices.
//!
//! ```bash
//! cargo run --example analyze_alignment
//! ```

use monoalign::{alignment_loss, alignment_loss_grad, centroids, monotonicity_report, AlignmentMatrix};

fn show(name: &str, a: &AlignmentMatrix, delta: f64) -> Result<(), Box<dyn std::error::Error>> {
    let c = centroids(a);
    let report = monotonicity_report(a, delta)?;
    println!("{name} ({}x{}), delta = {delta}", a.n_inputs(), a.n_frames());
    println!("  centroids  {:?}", c.as_slice());
    println!("  loss       {:.7}", alignment_loss(a, delta)?);
    println!(
        "  violations {}/{} (max {:.4})",
        report.violation_count,
        a.n_frames().saturating_sub(1),
        report.max_violation
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let diagonal = AlignmentMatrix::one_hot(3, &[0, 1, 2])?;
    let reversed = AlignmentMatrix::one_hot(3, &[2, 1, 0])?;
    let uniform = AlignmentMatrix::from_columns(&vec![vec![0.25; 4]; 5])?;
    // stalls on input 2 for two frames, then jumps back
    let stutter = AlignmentMatrix::from_columns(&[
        vec![0.9, 0.1, 0.0, 0.0],
        vec![0.1, 0.8, 0.1, 0.0],
        vec![0.0, 0.8, 0.2, 0.0],
        vec![0.6, 0.4, 0.0, 0.0],
        vec![0.0, 0.1, 0.3, 0.6],
    ])?;

    show("diagonal", &diagonal, 0.01)?;
    show("reversed", &reversed, 0.01)?;
    show("uniform", &uniform, 0.01)?;
    show("stutter", &stutter, 0.01)?;

    let g = alignment_loss_grad(&stutter, 0.01)?;
    println!("\ngradient of the stutter loss (rows = inputs):");
    for i in 0..stutter.n_inputs() {
        let row: Vec<String> = (0..stutter.n_frames())
            .map(|j| format!("{:+.3}", g[i * stutter.n_frames() + j]))
            .collect();
        println!("  {}", row.join(" "));
    }

    println!("\nCSV form, as read by `monoalign analyze`:\n{}", stutter.to_csv());
    Ok(())
}
