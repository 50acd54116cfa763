//! Backprop against central differences, for every tape op and for the
//! full model objective.
//!
//! ```bash
//! cargo run --release --example gradient_check -- 3
//! ```

use monoalign::autodiff::{Tape, Tensor};
use monoalign::gradcheck::{check_model, check_ops};
use monoalign::finite_diff_check;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);

    // a hand-rolled check: d/dx sum(tanh(x)^2)
    let x = Tensor::matrix(2, 3, vec![0.3, -1.2, 0.7, 2.0, -0.1, 0.0])?;
    let zeros = Tensor::zeros(&[2, 3]);
    let check = finite_diff_check(
        |tape: &mut Tape, x| {
            let t = tape.tanh(x)?;
            let z = tape.leaf(&zeros)?;
            tape.mse(t, z)
        },
        &x,
        1e-6,
    )?;
    println!("mean(tanh(x)^2): max relative error {:.2e}", check.max_rel_error);

    for line in check_ops(seed, None)?.into_iter().chain(check_model(seed, None)?) {
        println!(
            "{:<16} {:.2e}  {}",
            line.name,
            line.max_rel_error,
            if line.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
