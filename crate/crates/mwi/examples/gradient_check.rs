//! Adjoint-state gradient against central finite differences on a
//! random-perturbed model; the relative error per probed cell should sit
//! around 1e-6, far below the 1e-4 gate.
//!
//! Usage: `cargo run --release --example gradient_check [cells]`

use mwi::gradient_fd_check;

fn main() -> mwi::Result<()> {
    let cells: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let t0 = std::time::Instant::now();
    let result = gradient_fd_check(20, 20, 2, 10, 3, cells, 7)?;
    println!(
        "{} cells on a 20x20 grid, 2 sources, 3 frequencies: max relative error {:.3e} ({:.1} s)",
        result.cells_checked,
        result.max_rel_error,
        t0.elapsed().as_secs_f64()
    );
    println!("{}", if result.max_rel_error <= 1e-4 { "PASS" } else { "FAIL" });
    Ok(())
}
