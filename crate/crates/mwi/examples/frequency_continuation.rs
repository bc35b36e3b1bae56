//! Classic low-to-high frequency continuation: two cycles of
//! single-frequency inversion over 1.0 / 1.5 / 2.0 / 2.5 Hz stages, each
//! stage starting from the previous stage's model with multipliers reset
//! to that stage's observed data.
//!
//! Usage: `cargo run --release --example frequency_continuation`

use mwi::{
    forward_map, frequency_continuation, make_homogeneous, make_two_layer, Acquisition, Method,
    ModelingOptions, RunConfig, Side,
};

fn main() -> mwi::Result<()> {
    // Coarse two-layer model keeps single-frequency stages cheap.
    let h = 150.0;
    let truth = make_two_layer(h)?.with_velocity_bounds(2000.0, 4000.0)?;
    let initial =
        make_homogeneous(truth.nx, truth.nz, h, 2000.0)?.with_velocity_bounds(2000.0, 4000.0)?;
    println!("grid {}x{} at {h} m", truth.nx, truth.nz);

    let all_freqs = vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
    let acq =
        Acquisition::lines(truth.nx, truth.nz, 5, Side::Top, 30, Side::Top, 3.0, all_freqs)?;
    let observed = forward_map(&truth, &acq, &ModelingOptions::default())?;

    let stages: Vec<Vec<f64>> = vec![vec![1.0], vec![1.5], vec![2.0], vec![2.5]];
    let mut schedule = Vec::new();
    for _ in 0..2 {
        schedule.extend(stages.iter().cloned());
    }

    let cfg = RunConfig {
        method: Method::Mwi,
        iterations: 10,
        truth: Some(truth.clone()),
        ..Default::default()
    };
    let rmse0 = initial.rms_error(&truth);
    println!("initial rmse {rmse0:.6e}");
    let state = frequency_continuation(&schedule, &cfg, &acq, &observed, &initial)?;
    println!(
        "{} stages x {} iterations = {} outer iterations",
        schedule.len(),
        cfg.iterations,
        state.k
    );
    for (s, stage) in schedule.iter().enumerate() {
        let start = s * cfg.iterations;
        let rec = &state.log[start];
        println!(
            "stage {s} ({:?} Hz): entering rmse {:.6e}",
            stage,
            rec.model_rmse.unwrap()
        );
    }
    let rmse = state.model.rms_error(&truth);
    println!("final rmse {rmse:.6e} ({:.1}% of initial)", 100.0 * rmse / rmse0);
    Ok(())
}
