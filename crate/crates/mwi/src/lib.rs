//! Frequency-domain acoustic full-waveform inversion (FWI) with a
//! multiplier-based outer loop (MWI).
//!
//! The crate models 2D constant-density acoustics in the frequency domain
//! with absorbing boundary layers, computes misfit gradients by the
//! adjoint-state method, and updates models either against the observed
//! data (classical penalty FWI) or against running Lagrange multipliers
//! that replace the observed data (MWI). Preconditioning uses the diagonal
//! pseudo-Hessian; optional Tikhonov or total-variation proximal steps and
//! box projection regularize the updates. A fixed step length, set once at
//! the first iteration, is used throughout a run.
//!
//! Start from the runnable demos in `examples/` (forward modeling, gradient
//! verification, the transmission and reflection inversions, multiplier
//! equivalence, frequency continuation, penalty sweeps), or from the `mwi`
//! binary for file-driven runs; `mwi invert --manifest <file>` executes the
//! manifests shipped under `manifests/`.

pub mod acquisition;
pub mod cli;
pub mod error;
pub mod helmholtz;
pub mod inversion;
pub mod io;
pub mod model;
pub mod regularizer;
pub mod sensitivity;

pub use acquisition::{
    default_band, dispersion_cap_hz, inject, ricker_spectrum, sample, Acquisition, Side,
};
pub use error::{MwiError, Result};
pub use helmholtz::{
    assemble, factorize, solve_adjoint, solve_forward, DiscreteOperator, Factorization, Field,
    ModelingOptions,
};
pub use inversion::{
    frequency_continuation, model_step, multiplier_step, run_inversion, run_inversion_with_sink,
    scaled_unscaled_equivalence_probe, unscaled_al_iteration, InversionState, IterRecord, Method,
    RunConfig,
};
pub use model::{
    make_camembert, make_homogeneous, make_two_layer, project_bounds, resample_model, Model,
};
pub use regularizer::{RegKind, Regularizer};
pub use sensitivity::{
    forward_map, gn_modified_gradient, gradient_fd_check, jacobian_apply, misfit_and_gradient,
    pseudo_hessian_diag, GradientBundle, ShotData,
};
