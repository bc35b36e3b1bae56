//! Forward modeling sanity: point-source traces in a homogeneous medium
//! against the analytic 2D Green's function `(i/4) H0^(1)(w sqrt(m) r)`,
//! plus a shot gather through the circular-anomaly model.
//!
//! Usage: `cargo run --release --example forward_modeling`

use std::path::PathBuf;

use num_complex::Complex64;

use mwi::io::save_shot_data;
use mwi::{
    forward_map, make_camembert, make_homogeneous, ricker_spectrum, Acquisition, ModelingOptions,
    Side,
};

/// Hankel function of the first kind, order zero.
fn hankel0(x: f64) -> Complex64 {
    Complex64::new(libm::j0(x), libm::y0(x))
}

fn main() -> mwi::Result<()> {
    // 5 Hz in 2000 m/s gives a 400 m wavelength; 12.5 m spacing resolves it
    // with 32 points per wavelength, so the second-order stencil's phase
    // error stays well under the comparison threshold.
    let (v, f_hz, h) = (2000.0, 5.0, 12.5);
    let lambda = v / f_hz;
    let nx = 260;
    let nz = 140;
    let model = make_homogeneous(nx, nz, h, v)?;
    let src = (64, 70); // two wavelengths from the left and vertical edges
    let receivers: Vec<(usize, usize)> = (96..=184).step_by(8).map(|ix| (ix, 70)).collect();
    let acq = Acquisition {
        sources: vec![src],
        receivers: receivers.clone(),
        peak_hz: 10.0,
        frequencies: vec![f_hz],
    };
    let opts = ModelingOptions::default();
    let data = forward_map(&model, &acq, &opts)?;

    let k = 2.0 * std::f64::consts::PI * f_hz / v;
    let w = ricker_spectrum(10.0, f_hz);
    println!("point source at {src:?}, wavelength {lambda} m ({} cells)", lambda / h);
    println!(
        "{:>10} {:>12} {:>12} {:>10} {:>10}",
        "r/lambda", "|numeric|", "|analytic|", "amp err", "phase err"
    );
    let mut worst_amp = 0.0f64;
    let mut worst_phase = 0.0f64;
    for (ri, &(ix, _)) in receivers.iter().enumerate() {
        let r = (ix - src.0) as f64 * h;
        let analytic = Complex64::new(0.0, 0.25) * hankel0(k * r) * w;
        let numeric = data.data[(0, 0, ri)];
        let amp_err = (numeric.norm() - analytic.norm()).abs() / analytic.norm();
        let mut phase_err = (numeric.arg() - analytic.arg()).abs();
        if phase_err > std::f64::consts::PI {
            phase_err = 2.0 * std::f64::consts::PI - phase_err;
        }
        worst_amp = worst_amp.max(amp_err);
        worst_phase = worst_phase.max(phase_err);
        println!(
            "{:>10.2} {:>12.5e} {:>12.5e} {:>9.2}% {:>8.4} rad",
            r / lambda,
            numeric.norm(),
            analytic.norm(),
            100.0 * amp_err,
            phase_err
        );
    }
    println!("worst amplitude error {:.2}%, worst phase error {:.4} rad", 100.0 * worst_amp, worst_phase);

    // Shot gather through the circular anomaly, middle source.
    let truth = make_camembert(71.0, 0.4)?;
    let band = mwi::default_band(10.0, 8, None);
    let cam_acq =
        Acquisition::lines(truth.nx, truth.nz, 14, Side::Top, 85, Side::Bottom, 10.0, band)?;
    let gather_acq = Acquisition {
        sources: vec![cam_acq.sources[7]],
        receivers: cam_acq.receivers.clone(),
        peak_hz: cam_acq.peak_hz,
        frequencies: cam_acq.frequencies.clone(),
    };
    let gather = forward_map(&truth, &gather_acq, &opts)?;
    let out = PathBuf::from("target/examples-output/forward");
    std::fs::create_dir_all(&out)?;
    let path = out.join("camembert_shot_gather_src07.bin");
    save_shot_data(&gather, &path)?;
    println!(
        "wrote {} ({} frequencies x {} receivers)",
        path.display(),
        gather.n_frequencies(),
        gather.n_receivers()
    );
    Ok(())
}
