//! Sensitivity of the multiplier iteration to the penalty parameter. In
//! the scaled loop, mu only balances the regularizer against the misfit:
//! unregularized runs are identical for any mu, and lightly regularized
//! runs barely move.
//!
//! Usage: `cargo run --release --example penalty_sweep [iterations]`

use mwi::{
    default_band, forward_map, make_camembert, make_homogeneous, run_inversion, Acquisition,
    Method, ModelingOptions, RegKind, Regularizer, RunConfig, Side,
};

fn main() -> mwi::Result<()> {
    let iterations: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(50);
    let h = 142.0; // coarse grid keeps the sweep quick
    let truth = make_camembert(h, 0.4)?.with_velocity_bounds(4000.0, 4600.0)?;
    let initial =
        make_homogeneous(truth.nx, truth.nz, h, 4000.0)?.with_velocity_bounds(4000.0, 4600.0)?;
    let acq = Acquisition::lines(
        truth.nx,
        truth.nz,
        14,
        Side::Top,
        truth.nx,
        Side::Bottom,
        10.0,
        default_band(10.0, 8, None),
    )?;
    let observed = forward_map(&truth, &acq, &ModelingOptions::default())?;
    let rmse0 = initial.rms_error(&truth);
    println!("grid {}x{}, initial rmse {rmse0:.6e}", truth.nx, truth.nz);

    for (label, reg) in [
        ("reg none", Regularizer::default()),
        ("tikhonov 1e-2", Regularizer::new(RegKind::Tikhonov, 1e-2, 50)?),
    ] {
        println!("{label}:");
        for mu in [0.1, 1.0, 10.0] {
            let cfg = RunConfig {
                method: Method::Mwi,
                mu,
                iterations,
                regularizer: reg,
                truth: Some(truth.clone()),
                ..Default::default()
            };
            let state = run_inversion(&cfg, &acq, &observed, &initial)?;
            let rmse = state.model.rms_error(&truth);
            println!("  mu = {mu:>5}: final rmse {rmse:.6e} ({:.2}% of initial)", 100.0 * rmse / rmse0);
        }
    }
    Ok(())
}
