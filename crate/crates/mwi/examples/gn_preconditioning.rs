//! Data-domain Gauss-Newton preconditioning: filtering the residual
//! through `(S S^H + eps I)^{-1}` before back-propagation, then dividing
//! by the pseudo-Hessian diagonal, reproduces the damped Gauss-Newton step
//! without ever forming the model-space Hessian.
//!
//! Usage: `cargo run --release --example gn_preconditioning`

use mwi::{
    forward_map, gn_modified_gradient, make_homogeneous, misfit_and_gradient, Acquisition,
    ModelingOptions, RunConfig, Side,
};

fn main() -> mwi::Result<()> {
    let mut truth = make_homogeneous(16, 16, 25.0, 2000.0)?;
    for iz in 0..16 {
        for ix in 0..16 {
            truth.m[(iz, ix)] *= 1.0 + 0.06 * ((iz as f64 * 0.8).sin() * (ix as f64 * 0.6).cos());
        }
    }
    let model = make_homogeneous(16, 16, 25.0, 2000.0)?;
    let acq = Acquisition::lines(16, 16, 3, Side::Top, 8, Side::Bottom, 10.0, vec![6.0, 9.0])?;
    let opts = ModelingOptions::default();
    let observed = forward_map(&truth, &acq, &opts)?;

    let plain = misfit_and_gradient(&model, &acq, &observed, &opts)?;
    let gn = gn_modified_gradient(&model, &acq, &observed, None, &opts)?;

    let phess = plain.pseudo_hessian.as_ref().unwrap();
    let cap = phess.iter().cloned().fold(f64::MIN, f64::max);
    let floor = mwi::inversion::PSEUDO_HESSIAN_DAMPING * cap;
    let dir =
        |g: &ndarray::Array2<f64>| g.iter().zip(phess.iter()).map(|(g, p)| g / (p + floor)).collect::<Vec<_>>();
    let d_plain = dir(&plain.gradient);
    let d_gn = dir(&gn.gradient);
    let dot: f64 = d_plain.iter().zip(d_gn.iter()).map(|(a, b)| a * b).sum();
    let na: f64 = d_plain.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = d_gn.iter().map(|b| b * b).sum::<f64>().sqrt();
    println!("misfit at the starting model: {:.6e}", plain.misfit);
    println!("plain descent direction norm:        {na:.6e}");
    println!("data-domain GN direction norm:       {nb:.6e}");
    println!("angle between the directions:        {:.2} deg", (dot / (na * nb)).acos().to_degrees());

    // One step along each direction, measured on the true objective.
    let cfg = RunConfig::default();
    let _ = cfg;
    for (label, d) in [("plain", &d_plain), ("gn", &d_gn)] {
        let peak = d.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let alpha = 0.02 * (model.m_max[(0, 0)] - model.m_min[(0, 0)]).abs().max(
            model.m[(0, 0)] * 0.2,
        ) / peak;
        let mut stepped = model.clone();
        for (m, &dv) in stepped.m.iter_mut().zip(d.iter()) {
            *m -= alpha * dv;
        }
        let e = misfit_and_gradient(&stepped, &acq, &observed, &opts)?.misfit;
        println!("{label:>6} step: misfit {:.6e} ({:.2}% of start)", e, 100.0 * e / plain.misfit);
    }
    Ok(())
}
