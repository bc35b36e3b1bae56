//! Penalty and multiplier inversion loops.
//!
//! Both methods run the same diagonalized outer iteration: one
//! preconditioned gradient step on the model per iteration, followed (for
//! `mwi` only) by the multiplier update `d_{k+1} = d_k + d_obs - S(m_{k+1})b`.
//! With `d_0 = d_obs` the first iterate is bit-identical across methods;
//! afterwards the multipliers accumulate the running sum of data residuals
//! and progressively correct the adjoint source. The model step divides the
//! gradient by the damped pseudo-Hessian diagonal, applies the fixed step
//! length, the regularizer's prox, and finally the box projection.
//!
//! The unscaled iteration keeps the multiplier vector `lambda` explicitly
//! and forms its gradient from `J^t [mu (S(m)b - d_obs) - lambda]`; it
//! exists as an independently coded oracle for the scaled loop under the
//! identification `d_k = d_obs + lambda_k / mu`.

use ndarray::Array2;

use crate::acquisition::Acquisition;
use crate::error::{MwiError, Result};
use crate::helmholtz::ModelingOptions;
use crate::model::{project_bounds, Model};
use crate::regularizer::Regularizer;
use crate::sensitivity::{evaluate, forward_map, gn_modified_gradient, Evaluation, ResidualMode, ShotData};

/// Which objective drives the model updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Classical penalty objective: data stay fixed at the observations.
    Fwi,
    /// Multiplier iteration: observations are replaced by running
    /// multipliers updated from the data residuals.
    Mwi,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fwi" => Ok(Method::Fwi),
            "mwi" => Ok(Method::Mwi),
            other => Err(format!("unknown method '{other}' (expected fwi/mwi)")),
        }
    }
}

/// Relative damping of the pseudo-Hessian diagonal: the preconditioner
/// divides by `diag + PSEUDO_HESSIAN_DAMPING * max(diag)`.
pub const PSEUDO_HESSIAN_DAMPING: f64 = 1e-3;

/// Default fraction of the bound range the first update may move any cell.
pub const DEFAULT_STEP_FRACTION: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    /// Penalty parameter; rescales the regularizer-to-misfit balance and
    /// the dual ascent step.
    pub mu: f64,
    pub iterations: usize,
    pub regularizer: Regularizer,
    /// Apply the box projection after each step.
    pub bounds_enabled: bool,
    /// Filter residuals through the data-domain Gauss-Newton block.
    pub gn_data_hessian: bool,
    /// Fraction of the bound range for the automatic step rule.
    pub step_frac: f64,
    /// Fixed step length override; when absent the step is set once at the
    /// first iteration so that `max|alpha * direction|` equals
    /// `step_frac * (m_max - m_min)` and then held.
    pub step_length: Option<f64>,
    /// Optional truth model for error logging.
    pub truth: Option<Model>,
    pub modeling: ModelingOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Mwi,
            mu: 1.0,
            iterations: 0,
            regularizer: Regularizer::default(),
            bounds_enabled: true,
            gn_data_hessian: false,
            step_frac: DEFAULT_STEP_FRACTION,
            step_length: None,
            truth: None,
            modeling: ModelingOptions::default(),
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(MwiError::InvalidConfig(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.step_frac > 0.0) || !self.step_frac.is_finite() {
            return Err(MwiError::InvalidConfig(format!(
                "step fraction must be positive, got {}",
                self.step_frac
            )));
        }
        if let Some(a) = self.step_length {
            if !(a > 0.0) || !a.is_finite() {
                return Err(MwiError::InvalidConfig(format!(
                    "step length must be positive, got {a}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-iteration convergence record; `e_true` is the misfit against the
/// observed data at the iterate the iteration started from.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub e_true: f64,
    pub e_multiplier: f64,
    pub grad_norm: f64,
    pub model_rmse: Option<f64>,
}

/// State of one inversion run.
#[derive(Debug, Clone)]
pub struct InversionState {
    /// Completed outer iterations.
    pub k: usize,
    pub model: Model,
    /// Effective data `d_k` for the scaled loops (`d_0 = d_obs`); the
    /// multiplier vector `lambda_k` for [`unscaled_al_iteration`].
    pub multipliers: ShotData,
    /// Fixed step length (0 when no iteration ever ran).
    pub alpha: f64,
    pub log: Vec<IterRecord>,
}

/// Observer invoked after every iteration with the fresh iterate; used by
/// the CLI for snapshots and checkpoints.
pub type IterationSink<'a> = &'a mut dyn FnMut(usize, &Model, &ShotData, &[IterRecord]) -> Result<()>;

/// `d + (observed - predicted)`, elementwise; shared by the loop and the
/// public multiplier step so both produce bit-identical sequences.
fn updated_multipliers(d: &ShotData, observed: &ShotData, predicted: &ShotData) -> ShotData {
    let mut out = d.clone();
    for ((o, &obs), &pred) in
        out.data.iter_mut().zip(observed.data.iter()).zip(predicted.data.iter())
    {
        *o += obs - pred;
    }
    out
}

/// `lambda - mu (predicted - observed)`, elementwise.
fn updated_lambda(lambda: &ShotData, observed: &ShotData, predicted: &ShotData, mu: f64) -> ShotData {
    let mut out = lambda.clone();
    for ((l, &obs), &pred) in
        out.data.iter_mut().zip(observed.data.iter()).zip(predicted.data.iter())
    {
        *l -= mu * (pred - obs);
    }
    out
}

/// Gradient divided by the damped pseudo-Hessian diagonal.
fn preconditioned_direction(gradient: &Array2<f64>, phess: &Array2<f64>) -> Array2<f64> {
    let cap = phess.iter().cloned().fold(f64::MIN, f64::max).max(f64::MIN_POSITIVE);
    let floor = PSEUDO_HESSIAN_DAMPING * cap;
    let mut dir = gradient.clone();
    dir.zip_mut_with(phess, |g, &p| *g /= p + floor);
    dir
}

/// Step rule: the largest first-update cell move equals
/// `step_frac * (m_max - m_min)`.
fn automatic_alpha(cfg: &RunConfig, model: &Model, direction: &Array2<f64>) -> Result<f64> {
    let peak = direction.iter().fold(0.0f64, |a, &d| a.max(d.abs()));
    if peak == 0.0 {
        return Ok(0.0);
    }
    let range = model.bound_range();
    if !(range > 0.0) || !range.is_finite() {
        return Err(MwiError::InvalidConfig(
            "automatic step rule needs a positive bound range; set bounds or a step length".into(),
        ));
    }
    Ok(cfg.step_frac * range / peak)
}

/// Gradient step, prox, then box projection.
fn apply_model_update(
    model: &Model,
    direction: &Array2<f64>,
    alpha: f64,
    cfg: &RunConfig,
    prox_scale: f64,
) -> Result<Model> {
    let mut next = model.clone();
    next.m.zip_mut_with(direction, |m, &d| *m -= alpha * d);
    if cfg.regularizer.weight > 0.0 && !matches!(cfg.regularizer.kind, crate::regularizer::RegKind::None)
    {
        next.m = cfg.regularizer.apply_prox(&next.m, prox_scale)?;
    }
    if next.m.iter().any(|v| !v.is_finite()) {
        return Err(MwiError::Numerical("model update produced non-finite values".into()));
    }
    if cfg.bounds_enabled {
        next = project_bounds(&next);
    }
    Ok(next)
}

fn gradient_bundle_for(
    model: &Model,
    acq: &Acquisition,
    cfg: &RunConfig,
    target: &ShotData,
    observed: &ShotData,
) -> Result<(f64, f64, Array2<f64>, Array2<f64>, ShotData)> {
    if cfg.gn_data_hessian {
        let bundle = gn_modified_gradient(model, acq, target, None, &cfg.modeling)?;
        let pred = forward_map(model, acq, &cfg.modeling)?;
        let e_true: f64 = 0.5
            * pred
                .data
                .iter()
                .zip(observed.data.iter())
                .map(|(p, o)| (p - o).norm_sqr())
                .sum::<f64>();
        Ok((bundle.misfit, e_true, bundle.gradient, bundle.pseudo_hessian.unwrap(), pred))
    } else {
        let ev = evaluate(model, acq, &cfg.modeling, ResidualMode::Against(target), true, true)?;
        Ok((
            ev.misfit_effective,
            ev.misfit_observed.unwrap_or(ev.misfit_effective),
            ev.gradient.unwrap(),
            ev.pseudo_hessian.unwrap(),
            ev.pred,
        ))
    }
}

/// One preconditioned model update against the state's effective data;
/// exactly one gradient evaluation.
pub fn model_step(state: &InversionState, cfg: &RunConfig, acq: &Acquisition) -> Result<Model> {
    cfg.validate()?;
    let (_, _, gradient, phess, _) =
        gradient_bundle_for(&state.model, acq, cfg, &state.multipliers, &state.multipliers)?;
    let direction = preconditioned_direction(&gradient, &phess);
    let alpha = if state.alpha > 0.0 {
        state.alpha
    } else {
        cfg.step_length.map_or_else(|| automatic_alpha(cfg, &state.model, &direction), Ok)?
    };
    apply_model_update(&state.model, &direction, alpha, cfg, alpha / cfg.mu)
}

/// Dual ascent step `d_{k+1} = d_k + observed - S(m_next) b`; exactly one
/// forward map.
pub fn multiplier_step(
    state: &InversionState,
    model_next: &Model,
    acq: &Acquisition,
    observed: &ShotData,
) -> Result<ShotData> {
    let pred = forward_map(model_next, acq, &ModelingOptions::default())?;
    Ok(updated_multipliers(&state.multipliers, observed, &pred))
}

/// Run the configured number of outer iterations.
pub fn run_inversion(
    cfg: &RunConfig,
    acq: &Acquisition,
    observed: &ShotData,
    initial: &Model,
) -> Result<InversionState> {
    run_inversion_with_sink(cfg, acq, observed, initial, None)
}

/// As [`run_inversion`], invoking `sink` after every completed iteration.
pub fn run_inversion_with_sink(
    cfg: &RunConfig,
    acq: &Acquisition,
    observed: &ShotData,
    initial: &Model,
    mut sink: Option<IterationSink>,
) -> Result<InversionState> {
    cfg.validate()?;
    acq.validate(initial.nx, initial.nz)?;
    if let Some(truth) = &cfg.truth {
        if truth.m.dim() != initial.m.dim() {
            return Err(MwiError::ShapeMismatch("truth model grid differs from the initial".into()));
        }
    }
    let mut model = initial.clone();
    let mut multipliers = observed.clone();
    let mut alpha = 0.0f64;
    let mut log: Vec<IterRecord> = Vec::with_capacity(cfg.iterations);

    for i in 0..cfg.iterations {
        let (e_eff, e_true, gradient, phess, pred) = if cfg.gn_data_hessian {
            // The data-domain block needs the effective data up front, so
            // the multipliers are advanced from a dedicated forward map.
            if matches!(cfg.method, Method::Mwi) && i > 0 {
                let pred_now = forward_map(&model, acq, &cfg.modeling)?;
                multipliers = updated_multipliers(&multipliers, observed, &pred_now);
            }
            gradient_bundle_for(&model, acq, cfg, &multipliers, observed)?
        } else {
            let mode = if matches!(cfg.method, Method::Mwi) && i > 0 {
                ResidualMode::MwiFused { d_prev: &multipliers, observed }
            } else {
                ResidualMode::Against(observed)
            };
            let ev: Evaluation = evaluate(&model, acq, &cfg.modeling, mode, true, true)?;
            let pred = ev.pred;
            if matches!(cfg.method, Method::Mwi) && i > 0 {
                multipliers = updated_multipliers(&multipliers, observed, &pred);
            }
            (
                ev.misfit_effective,
                ev.misfit_observed.expect("observed misfit always available here"),
                ev.gradient.unwrap(),
                ev.pseudo_hessian.unwrap(),
                pred,
            )
        };
        drop(pred);

        let direction = preconditioned_direction(&gradient, &phess);
        if i == 0 {
            alpha = match cfg.step_length {
                Some(a) => a,
                None => automatic_alpha(cfg, &model, &direction)?,
            };
        }
        log.push(IterRecord {
            iter: i,
            e_true,
            e_multiplier: e_eff,
            grad_norm: gradient.iter().map(|g| g * g).sum::<f64>().sqrt(),
            model_rmse: cfg.truth.as_ref().map(|t| model.rms_error(t)),
        });
        model = apply_model_update(&model, &direction, alpha, cfg, alpha / cfg.mu)?;
        if let Some(s) = sink.as_mut() {
            s(i + 1, &model, &multipliers, &log)?;
        }
    }
    if matches!(cfg.method, Method::Mwi) && cfg.iterations > 0 {
        // Trailing dual update so the returned state pairs m_k with d_k;
        // mid-loop updates ride along with the next gradient evaluation.
        let pred = forward_map(&model, acq, &cfg.modeling)?;
        multipliers = updated_multipliers(&multipliers, observed, &pred);
    }
    Ok(InversionState { k: cfg.iterations, model, multipliers, alpha, log })
}

/// The multiplier iteration in its original (unscaled) form, keeping the
/// multiplier vector explicitly with `lambda_0 = 0`. Diagnostic oracle for
/// the scaled loop: under `d_k = d_obs + lambda_k / mu` both loops produce
/// the same model sequence. The returned state's `multipliers` hold
/// `lambda`, not effective data.
pub fn unscaled_al_iteration(
    cfg: &RunConfig,
    acq: &Acquisition,
    observed: &ShotData,
    initial: &Model,
) -> Result<InversionState> {
    cfg.validate()?;
    acq.validate(initial.nx, initial.nz)?;
    let mut model = initial.clone();
    let mut lambda =
        ShotData::zeros(observed.n_sources(), observed.frequencies.clone(), observed.n_receivers());
    let mut alpha = 0.0f64;
    let mut log: Vec<IterRecord> = Vec::with_capacity(cfg.iterations);

    for i in 0..cfg.iterations {
        let mode = ResidualMode::AlUnscaled {
            lambda_prev: &lambda,
            observed,
            mu: cfg.mu,
            first: i == 0,
        };
        let ev = evaluate(&model, acq, &cfg.modeling, mode, true, true)?;
        if i > 0 {
            lambda = updated_lambda(&lambda, observed, &ev.pred, cfg.mu);
        }
        let direction = preconditioned_direction(ev.gradient.as_ref().unwrap(), ev.pseudo_hessian.as_ref().unwrap());
        if i == 0 {
            alpha = match cfg.step_length {
                Some(a) => a,
                None => automatic_alpha(cfg, &model, &direction)?,
            };
        }
        log.push(IterRecord {
            iter: i,
            e_true: ev.misfit_observed.unwrap(),
            e_multiplier: ev.misfit_effective,
            grad_norm: ev.gradient.as_ref().unwrap().iter().map(|g| g * g).sum::<f64>().sqrt(),
            model_rmse: cfg.truth.as_ref().map(|t| model.rms_error(t)),
        });
        model = apply_model_update(&model, &direction, alpha, cfg, alpha)?;
    }
    if cfg.iterations > 0 {
        let pred = forward_map(&model, acq, &cfg.modeling)?;
        lambda = updated_lambda(&lambda, observed, &pred, cfg.mu);
    }
    Ok(InversionState { k: cfg.iterations, model, multipliers: lambda, alpha, log })
}

/// Result of [`scaled_unscaled_equivalence_probe`]: worst relative model
/// difference and worst relative defect of `mu (d_k - d_obs) = lambda_k`.
#[derive(Debug, Clone, Copy)]
pub struct EquivalenceProbe {
    pub model_deviation: f64,
    pub multiplier_deviation: f64,
}

/// Run the scaled and unscaled multiplier loops side by side on a
/// deterministic 16x16 toy problem, comparing model sequences and the
/// multiplier identification at every iteration count up to `iterations`.
pub fn scaled_unscaled_equivalence_probe(iterations: usize) -> Result<EquivalenceProbe> {
    use crate::acquisition::Side;
    use crate::model::make_homogeneous;

    let (nx, nz, h) = (16, 16, 25.0);
    let mut truth = make_homogeneous(nx, nz, h, 2000.0)?;
    for iz in 0..nz {
        for ix in 0..nx {
            let bump = 0.08 * (0.7 * iz as f64 + 0.3).sin() * (0.5 * ix as f64 + 0.1).cos();
            truth.m[(iz, ix)] *= 1.0 + bump;
        }
    }
    let lo = truth.m.iter().cloned().fold(f64::MAX, f64::min) * 0.7;
    let hi = truth.m.iter().cloned().fold(f64::MIN, f64::max) * 1.3;
    truth.m_min.fill(lo);
    truth.m_max.fill(hi);
    let mut initial = make_homogeneous(nx, nz, h, 2000.0)?;
    initial.m_min.fill(lo);
    initial.m_max.fill(hi);
    let acq = crate::acquisition::Acquisition::lines(
        nx,
        nz,
        2,
        Side::Top,
        6,
        Side::Bottom,
        10.0,
        vec![5.0, 8.0],
    )?;
    let observed = forward_map(&truth, &acq, &ModelingOptions::default())?;
    let cfg = RunConfig { method: Method::Mwi, mu: 2.5, ..Default::default() };

    let mut model_dev = 0.0f64;
    let mut mult_dev = 0.0f64;
    for k in 1..=iterations.max(1) {
        let cfg_k = RunConfig { iterations: k, ..cfg.clone() };
        let scaled = run_inversion(&cfg_k, &acq, &observed, &initial)?;
        let unscaled = unscaled_al_iteration(&cfg_k, &acq, &observed, &initial)?;
        for (a, b) in scaled.model.m.iter().zip(unscaled.model.m.iter()) {
            model_dev = model_dev.max((a - b).abs() / b.abs().max(1e-30));
        }
        let mut defect = 0.0f64;
        let mut scale = 0.0f64;
        for (d, (o, l)) in scaled
            .multipliers
            .data
            .iter()
            .zip(observed.data.iter().zip(unscaled.multipliers.data.iter()))
        {
            defect = defect.max((cfg.mu * (d - o) - l).norm());
            scale = scale.max(l.norm());
        }
        mult_dev = mult_dev.max(defect / scale.max(1e-30));
    }
    Ok(EquivalenceProbe { model_deviation: model_dev, multiplier_deviation: mult_dev })
}

/// Run one inversion per stage, chaining each stage's final model into the
/// next and resetting the multipliers to the stage's observed data.
pub fn frequency_continuation(
    schedule: &[Vec<f64>],
    cfg: &RunConfig,
    acq: &Acquisition,
    observed: &ShotData,
    initial: &Model,
) -> Result<InversionState> {
    if schedule.is_empty() {
        return Err(MwiError::InvalidConfig("continuation schedule must be nonempty".into()));
    }
    let mut model = initial.clone();
    let mut log: Vec<IterRecord> = Vec::new();
    let mut total_k = 0usize;
    let mut last: Option<InversionState> = None;
    for stage in schedule {
        let (stage_acq, idx) = acq.with_frequencies(stage)?;
        let stage_obs = observed.select_frequencies(&idx);
        let state = run_inversion(cfg, &stage_acq, &stage_obs, &model)?;
        model = state.model.clone();
        for mut rec in state.log.iter().cloned() {
            rec.iter += total_k;
            log.push(rec);
        }
        total_k += state.k;
        last = Some(state);
    }
    let last = last.expect("schedule nonempty");
    Ok(InversionState { k: total_k, model, multipliers: last.multipliers, alpha: last.alpha, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::Side;
    use crate::model::make_homogeneous;
    use num_complex::Complex64;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn toy_problem(
        nx: usize,
        nz: usize,
        seed: u64,
    ) -> (Model, Model, Acquisition, ShotData, RunConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut truth = make_homogeneous(nx, nz, 25.0, 2000.0).unwrap();
        truth.m.mapv_inplace(|m| m * (1.0 + 0.10 * rng.gen_range(-1.0..1.0)));
        let initial = make_homogeneous(nx, nz, 25.0, 2000.0).unwrap();
        let lo = truth.m.iter().cloned().fold(f64::MAX, f64::min) * 0.7;
        let hi = truth.m.iter().cloned().fold(f64::MIN, f64::max) * 1.3;
        let clamp = |mut m: Model| {
            m.m_min.fill(lo);
            m.m_max.fill(hi);
            m
        };
        let truth = clamp(truth);
        let initial = clamp(initial);
        let acq =
            Acquisition::lines(nx, nz, 2, Side::Top, 5, Side::Bottom, 10.0, vec![6.0, 9.0]).unwrap();
        let observed = forward_map(&truth, &acq, &ModelingOptions::default()).unwrap();
        let cfg = RunConfig { iterations: 3, truth: Some(truth.clone()), ..Default::default() };
        (truth, initial, acq, observed, cfg)
    }

    #[test]
    fn zero_iterations_returns_the_initial_state() {
        let (_, initial, acq, observed, mut cfg) = toy_problem(8, 8, 1);
        cfg.iterations = 0;
        let st = run_inversion(&cfg, &acq, &observed, &initial).unwrap();
        assert_eq!(st.k, 0);
        assert!(st.log.is_empty());
        assert_eq!(st.model.m, initial.m);
        assert_eq!(st.multipliers.data, observed.data);
    }

    #[test]
    fn first_iterate_is_bit_identical_across_methods() {
        let (_, initial, acq, observed, mut cfg) = toy_problem(10, 10, 2);
        cfg.iterations = 1;
        cfg.method = Method::Fwi;
        let fwi = run_inversion(&cfg, &acq, &observed, &initial).unwrap();
        cfg.method = Method::Mwi;
        let mwi = run_inversion(&cfg, &acq, &observed, &initial).unwrap();
        assert_eq!(fwi.model.m, mwi.model.m, "m1 must agree bitwise");
        assert_eq!(fwi.alpha, mwi.alpha);
        // and for a different mu too
        cfg.mu = 7.5;
        let mwi_mu = run_inversion(&cfg, &acq, &observed, &initial).unwrap();
        assert_eq!(fwi.model.m, mwi_mu.model.m);
    }

    #[test]
    fn feasible_point_is_stationary() {
        let (_, initial, acq, _, mut cfg) = toy_problem(8, 8, 3);
        let observed = forward_map(&initial, &acq, &cfg.modeling).unwrap();
        cfg.iterations = 3;
        for method in [Method::Fwi, Method::Mwi] {
            cfg.method = method;
            let st = run_inversion(&cfg, &acq, &observed, &initial).unwrap();
            assert_eq!(st.model.m, initial.m, "{method:?} moved a feasible model");
            for (a, b) in st.multipliers.data.iter().zip(observed.data.iter()) {
                assert_eq!(a, b, "{method:?} multipliers drifted at a feasible point");
            }
        }
    }

    #[test]
    fn multiplier_step_algebra() {
        let (truth, initial, acq, observed, cfg) = toy_problem(8, 8, 4);
        let state = InversionState {
            k: 0,
            model: initial.clone(),
            multipliers: observed.clone(),
            alpha: 1.0,
            log: vec![],
        };
        // Feasible model fixes the multipliers exactly.
        let d1 = multiplier_step(&state, &truth, &acq, &observed).unwrap();
        let pred = forward_map(&truth, &acq, &cfg.modeling).unwrap();
        for ((d, o), p) in d1.data.iter().zip(observed.data.iter()).zip(pred.data.iter()) {
            assert_eq!(*d, o + (o - p));
        }
        // d1 = d* - r1 with r1 the residual at m1.
        let m1 = model_step(&state, &cfg, &acq).unwrap();
        let d1 = multiplier_step(&state, &m1, &acq, &observed).unwrap();
        let r1 = {
            let p = forward_map(&m1, &acq, &cfg.modeling).unwrap();
            let mut r = p.clone();
            for (rv, o) in r.data.iter_mut().zip(observed.data.iter()) {
                *rv -= o;
            }
            r
        };
        for ((d, o), r) in d1.data.iter().zip(observed.data.iter()).zip(r1.data.iter()) {
            assert!((d - (o - r)).norm() <= 1e-16 * o.norm().max(1.0));
        }
    }

    #[test]
    fn multipliers_telescope_the_residual_sum() {
        let (_, initial, acq, observed, mut cfg) = toy_problem(8, 8, 5);
        cfg.method = Method::Mwi;
        cfg.iterations = 3;
        let st3 = run_inversion(&cfg, &acq, &observed, &initial).unwrap();
        // models after 1 and 2 iterations via determinism
        let mut acc = observed.clone();
        for k in 1..=3usize {
            cfg.iterations = k;
            let mk = run_inversion(&cfg, &acq, &observed, &initial).unwrap().model;
            let pred = forward_map(&mk, &acq, &cfg.modeling).unwrap();
            acc = updated_multipliers(&acc, &observed, &pred);
        }
        for (a, b) in st3.multipliers.data.iter().zip(acc.data.iter()) {
            assert_eq!(a, b, "telescoped multipliers must match bitwise");
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let (_, initial, acq, observed, mut cfg) = toy_problem(10, 9, 6);
        cfg.method = Method::Mwi;
        cfg.iterations = 4;
        let a = run_inversion(&cfg, &acq, &observed, &initial).unwrap();
        let b = run_inversion(&cfg, &acq, &observed, &initial).unwrap();
        assert_eq!(a.model.m, b.model.m);
        assert_eq!(a.log, b.log);
        assert_eq!(a.multipliers.data, b.multipliers.data);
    }

    #[test]
    fn model_step_matches_dense_oracle() {
        use crate::acquisition::{ricker_spectrum, sample};
        use crate::helmholtz::{assemble, Field};
        // 3x3 interior, one source, one frequency: rebuild the whole step
        // with dense linear algebra and compare to 1e-12.
        let mut model = make_homogeneous(3, 3, 30.0, 2000.0).unwrap();
        model.m[(1, 1)] *= 1.05;
        model.m_min.fill(model.m[(0, 0)] * 0.8);
        model.m_max.fill(model.m[(1, 1)] * 1.2);
        let acq = Acquisition {
            sources: vec![(1, 0)],
            receivers: vec![(0, 2), (2, 2)],
            peak_hz: 10.0,
            frequencies: vec![9.0],
        };
        let opts = ModelingOptions { pml_cells: 8, ..Default::default() };
        let mut truth = model.clone();
        truth.m[(1, 1)] *= 1.02;
        let observed = forward_map(&truth, &acq, &opts).unwrap();
        let cfg = RunConfig { iterations: 1, modeling: opts, ..Default::default() };
        let state = InversionState {
            k: 0,
            model: model.clone(),
            multipliers: observed.clone(),
            alpha: 0.0,
            log: vec![],
        };
        let stepped = model_step(&state, &cfg, &acq).unwrap();

        // dense route
        let omega = 2.0 * std::f64::consts::PI * 9.0;
        let op = assemble(&model, omega, &opts).unwrap();
        let grid = op.grid;
        let (pnz, pnx) = (grid.padded_nz(), grid.padded_nx());
        let n = grid.n();
        let mut dense = nalgebra::DMatrix::from_element(n, n, Complex64::ZERO);
        for col in 0..n {
            let mut e = Field::zeros(grid);
            e.values[(col / pnx, col % pnx)] = Complex64::new(1.0, 0.0);
            let ae = op.apply(&e);
            for row in 0..n {
                dense[(row, col)] = ae.values[(row / pnx, row % pnx)];
            }
        }
        let lu = dense.lu();
        let amp = ricker_spectrum(10.0, 9.0);
        let (sx, sz) = grid.pad_index(acq.sources[0].0, acq.sources[0].1);
        let mut b = nalgebra::DVector::from_element(n, Complex64::ZERO);
        b[sz * pnx + sx] = Complex64::new(amp / (30.0 * 30.0), 0.0);
        let u = lu.solve(&b).unwrap();
        let mut u_field = Field::zeros(grid);
        for row in 0..n {
            u_field.values[(row / pnx, row % pnx)] = u[row];
        }
        let traces = sample(&u_field, &acq);
        let resid: Vec<Complex64> = traces
            .iter()
            .zip(0..2)
            .map(|(t, r)| t - observed.data[(0, 0, r)])
            .collect();
        // y = A^{-1} P^t conj(resid)
        let mut rhs = nalgebra::DVector::from_element(n, Complex64::ZERO);
        for (ri, &(ix, iz)) in acq.receivers.iter().enumerate() {
            let (px, pz) = grid.pad_index(ix, iz);
            rhs[pz * pnx + px] += resid[ri].conj();
        }
        let y = lu.solve(&rhs).unwrap();
        let mut grad = Array2::from_elem((3, 3), 0.0f64);
        let mut phess = Array2::from_elem((3, 3), 0.0f64);
        for jz in 0..pnz {
            for jx in 0..pnx {
                let iz = jz.saturating_sub(grid.pml).min(2);
                let ix = jx.saturating_sub(grid.pml).min(2);
                let c = op.mass_scale_at(jz, jx) * u_field.values[(jz, jx)] * y[jz * pnx + jx];
                grad[(iz, ix)] += omega * omega * c.re;
            }
        }
        for iz in 0..3 {
            for ix in 0..3 {
                let (px, pz) = grid.pad_index(ix, iz);
                phess[(iz, ix)] = omega.powi(4) * u_field.values[(pz, px)].norm_sqr();
            }
        }
        let cap = phess.iter().cloned().fold(f64::MIN, f64::max);
        let dir = Array2::from_shape_fn((3, 3), |idx| {
            grad[idx] / (phess[idx] + PSEUDO_HESSIAN_DAMPING * cap)
        });
        let peak = dir.iter().fold(0.0f64, |a, &d| a.max(d.abs()));
        let alpha = DEFAULT_STEP_FRACTION * model.bound_range() / peak;
        let mut expect = model.clone();
        expect.m.zip_mut_with(&dir, |m, &d| *m -= alpha * d);
        let expect = project_bounds(&expect);
        for (a, b) in stepped.m.iter().zip(expect.m.iter()) {
            let rel = (a - b).abs() / b.abs().max(1e-30);
            assert!(rel < 1e-12, "dense oracle mismatch: {a:.15e} vs {b:.15e}");
        }
    }

    #[test]
    fn scaled_and_unscaled_loops_agree() {
        let (_, initial, acq, observed, mut cfg) = toy_problem(10, 10, 7);
        cfg.method = Method::Mwi;
        cfg.mu = 2.5;
        for k in 1..=3usize {
            cfg.iterations = k;
            let scaled = run_inversion(&cfg, &acq, &observed, &initial).unwrap();
            let unscaled = unscaled_al_iteration(&cfg, &acq, &observed, &initial).unwrap();
            let mut max_rel = 0.0f64;
            for (a, b) in scaled.model.m.iter().zip(unscaled.model.m.iter()) {
                max_rel = max_rel.max((a - b).abs() / b.abs().max(1e-30));
            }
            assert!(max_rel < 1e-10, "k={k}: model sequences differ by {max_rel:.3e}");
            // mu (d_k - d*) = lambda_k
            let mut max_dev = 0.0f64;
            let mut scale = 0.0f64;
            for (d, (o, l)) in scaled
                .multipliers
                .data
                .iter()
                .zip(observed.data.iter().zip(unscaled.multipliers.data.iter()))
            {
                max_dev = max_dev.max((cfg.mu * (d - o) - l).norm());
                scale = scale.max(l.norm());
            }
            assert!(max_dev <= 1e-10 * scale.max(1e-30), "k={k}: multiplier map off by {max_dev:.3e}");
        }
    }

    #[test]
    fn mu_is_absorbed_when_unregularized() {
        let (_, initial, acq, observed, mut cfg) = toy_problem(9, 9, 8);
        cfg.method = Method::Mwi;
        cfg.iterations = 4;
        let runs: Vec<_> = [0.1, 1.0, 10.0]
            .iter()
            .map(|&mu| {
                cfg.mu = mu;
                run_inversion(&cfg, &acq, &observed, &initial).unwrap().model
            })
            .collect();
        for other in &runs[1..] {
            let mut max_rel = 0.0f64;
            for (a, b) in runs[0].m.iter().zip(other.m.iter()) {
                max_rel = max_rel.max((a - b).abs() / b.abs().max(1e-30));
            }
            assert!(max_rel < 1e-12, "mu leaked into the unregularized iteration: {max_rel:.3e}");
        }
    }

    #[test]
    fn continuation_single_stage_equals_plain_run() {
        let (_, initial, acq, observed, mut cfg) = toy_problem(8, 8, 9);
        cfg.method = Method::Mwi;
        cfg.iterations = 2;
        let plain = run_inversion(&cfg, &acq, &observed, &initial).unwrap();
        let staged =
            frequency_continuation(&[acq.frequencies.clone()], &cfg, &acq, &observed, &initial)
                .unwrap();
        assert_eq!(plain.model.m, staged.model.m);
        assert_eq!(plain.log, staged.log);
    }

    #[test]
    fn continuation_chains_models_bit_exactly_and_resets_multipliers() {
        let (_, initial, acq, observed, mut cfg) = toy_problem(8, 8, 10);
        cfg.method = Method::Mwi;
        cfg.iterations = 2;
        let stage_a = vec![acq.frequencies[0]];
        let stage_b = vec![acq.frequencies[1]];
        let both = frequency_continuation(
            &[stage_a.clone(), stage_b.clone()],
            &cfg,
            &acq,
            &observed,
            &initial,
        )
        .unwrap();
        // Stage A alone, then stage B started from its final model.
        let first = frequency_continuation(&[stage_a], &cfg, &acq, &observed, &initial).unwrap();
        let second = frequency_continuation(&[stage_b], &cfg, &acq, &observed, &first.model).unwrap();
        assert_eq!(both.model.m, second.model.m, "stage boundary must chain bit-exactly");
        assert_eq!(both.k, 4);
        assert_eq!(both.log.len(), 4);
        // multipliers at a stage start are that stage's observed data
        assert_eq!(both.multipliers.n_frequencies(), 1);
        assert_eq!(second.multipliers.data, both.multipliers.data);
        // missing frequency is rejected
        assert!(frequency_continuation(&[vec![123.0]], &cfg, &acq, &observed, &initial).is_err());
    }

    #[test]
    fn rejects_invalid_configs() {
        let (_, initial, acq, observed, mut cfg) = toy_problem(8, 8, 11);
        cfg.mu = 0.0;
        assert!(run_inversion(&cfg, &acq, &observed, &initial).is_err());
        cfg.mu = 1.0;
        cfg.step_frac = -1.0;
        assert!(run_inversion(&cfg, &acq, &observed, &initial).is_err());
        cfg.step_frac = 0.02;
        cfg.step_length = Some(0.0);
        assert!(run_inversion(&cfg, &acq, &observed, &initial).is_err());
    }
}
