//! Total-variation proximal denoising of a blocky velocity image: the
//! prox removes noise while keeping the layer edge sharp, and never
//! increases the TV value.
//!
//! Usage: `cargo run --release --example tv_regularization`

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use mwi::model::make_two_layer;
use mwi::{RegKind, Regularizer};

fn main() -> mwi::Result<()> {
    let truth = make_two_layer(150.0)?;
    let clean = truth.m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise_level = 0.05 * clean[(0, 0)];
    let mut noisy = clean.clone();
    noisy.mapv_inplace(|v| v + noise_level * rng.gen_range(-1.0..1.0));

    let reg = Regularizer::new(RegKind::Tv, 1.0, 400)?;
    let l2 = |a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>| -> f64 {
        (a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            / a.len() as f64)
            .sqrt()
    };
    println!("noisy image:    rms error {:.3e}, tv {:.3e}", l2(&noisy, &clean), reg.reg_value(&noisy));
    for scale in [0.5 * noise_level, 2.0 * noise_level, 8.0 * noise_level] {
        let denoised = reg.apply_prox(&noisy, scale)?;
        println!(
            "prox scale {scale:.2e}: rms error {:.3e}, tv {:.3e}",
            l2(&denoised, &clean),
            reg.reg_value(&denoised)
        );
    }
    Ok(())
}
