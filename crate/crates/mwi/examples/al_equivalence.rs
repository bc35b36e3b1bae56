//! The scaled multiplier loop (effective data `d_k`) against the original
//! unscaled iteration (explicit multipliers `lambda_k`): under the map
//! `d_k = d_obs + lambda_k / mu` both produce the same model sequence, and
//! `mu (d_k - d_obs)` tracks `lambda_k` at every iteration.
//!
//! Usage: `cargo run --release --example al_equivalence [iterations]`

use mwi::scaled_unscaled_equivalence_probe;

fn main() -> mwi::Result<()> {
    let iterations: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let probe = scaled_unscaled_equivalence_probe(iterations)?;
    println!(
        "over {iterations} iterations on a 16x16 toy problem (mu = 2.5):\n\
         worst relative model deviation      {:.3e}\n\
         worst relative multiplier deviation {:.3e}",
        probe.model_deviation, probe.multiplier_deviation
    );
    println!(
        "{}",
        if probe.model_deviation <= 1e-10 && probe.multiplier_deviation <= 1e-10 {
            "PASS (1e-10)"
        } else {
            "FAIL (1e-10)"
        }
    );
    Ok(())
}
