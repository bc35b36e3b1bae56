//! Surface-reflection inversion of a two-layer model from a homogeneous
//! water-speed start. Sources and receivers share the top edge, so the only
//! information about the deep layer is the interface reflection; no
//! regularization and no bound projection are applied.
//!
//! Usage: `cargo run --release --example two_layer_reflection [iterations]`
//!
//! Outputs land in `target/examples-output/reflection/`.

use std::path::PathBuf;

use mwi::io::{save_model, write_convergence_csv, write_model_pgm};
use mwi::model::{TWO_LAYER_BOTTOM_MS, TWO_LAYER_INTERFACE_M};
use mwi::{
    default_band, forward_map, make_homogeneous, make_two_layer, run_inversion, Acquisition,
    Method, Model, ModelingOptions, RunConfig, Side,
};

/// Mean absolute velocity error over the interior of the second layer,
/// two rows clear of the interface and the bottom edge.
fn second_layer_mae(model: &Model) -> f64 {
    let v = model.velocity();
    let interface_row = (TWO_LAYER_INTERFACE_M / model.h).round() as usize;
    let lo = interface_row + 2;
    let hi = model.nz - 2;
    let mut sum = 0.0;
    let mut count = 0usize;
    for iz in lo..hi {
        for ix in 0..model.nx {
            sum += (v[(iz, ix)] - TWO_LAYER_BOTTOM_MS).abs();
            count += 1;
        }
    }
    sum / count as f64
}

fn main() -> mwi::Result<()> {
    let iterations: usize =
        std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(400);
    let h = 60.0;
    let truth = make_two_layer(h)?.with_velocity_bounds(2000.0, 4000.0)?;
    let initial =
        make_homogeneous(truth.nx, truth.nz, h, 2000.0)?.with_velocity_bounds(2000.0, 4000.0)?;
    println!("grid {}x{} at {h} m", truth.nx, truth.nz);

    let band = default_band(5.0, 8, None);
    println!("band: {:?} Hz", band.iter().map(|f| (f * 100.0).round() / 100.0).collect::<Vec<_>>());
    let acq = Acquisition::lines(truth.nx, truth.nz, 31, Side::Top, 150, Side::Top, 5.0, band)?;
    let opts = ModelingOptions::default();
    let observed = forward_map(&truth, &acq, &opts)?;

    let out_dir = PathBuf::from("target/examples-output/reflection");
    std::fs::create_dir_all(&out_dir)?;
    write_model_pgm(&truth, &out_dir.join("true_model.pgm"))?;

    let rmse0 = initial.rms_error(&truth);
    println!("initial model rmse: {rmse0:.6e}");
    println!("initial second-layer velocity mae: {:.1} m/s", second_layer_mae(&initial));

    let mut results = Vec::new();
    for method in [Method::Mwi, Method::Fwi] {
        let tag = match method {
            Method::Mwi => "mwi",
            Method::Fwi => "fwi",
        };
        let cfg = RunConfig {
            method,
            iterations,
            bounds_enabled: false,
            truth: Some(truth.clone()),
            modeling: opts,
            ..Default::default()
        };
        let t0 = std::time::Instant::now();
        let state = run_inversion(&cfg, &acq, &observed, &initial)?;
        let rmse = state.model.rms_error(&truth);
        let mae = second_layer_mae(&state.model);
        println!(
            "{tag}: {} iterations in {:.1} s, rmse {rmse:.6e} ({:.1}% of initial), layer mae {mae:.1} m/s",
            state.k,
            t0.elapsed().as_secs_f64(),
            100.0 * rmse / rmse0
        );
        save_model(&state.model, &out_dir.join(format!("{tag}_final.bin")))?;
        write_model_pgm(&state.model, &out_dir.join(format!("{tag}_final.pgm")))?;
        write_convergence_csv(&state.log, &out_dir.join(format!("{tag}_convergence.csv")))?;
        results.push((tag, rmse, mae));
    }
    println!("rmse ratio mwi/fwi: {:.4}", results[0].1 / results[1].1);
    println!("outputs in {}", out_dir.display());
    Ok(())
}
