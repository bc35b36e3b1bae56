//! Reduced forward map and its derivatives.
//!
//! The forward map solves one Helmholtz system per (source, frequency) with
//! a Ricker-weighted point load and samples the receivers. Gradients of the
//! least-squares misfit come from the adjoint-state method: back-propagate
//! the conjugated residual, correlate with the forward field through
//! `dA/dm = -w^2 diag(s)`, take the real part, and sum over sources and
//! frequencies. Pad nodes fold their contribution back onto the interior
//! cell they edge-extend, so the gradient is the exact derivative of the
//! discrete map everywhere, which the finite-difference checks rely on.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::acquisition::{ricker_spectrum, sample, source_field, Acquisition};
use crate::error::{MwiError, Result};
use crate::helmholtz::{
    assemble, factorize, solve_adjoint, solve_forward, Factorization, Field, ModelingOptions,
    PaddedGrid,
};
use crate::model::Model;

/// Complex data cube indexed (source, frequency, receiver).
#[derive(Debug, Clone, PartialEq)]
pub struct ShotData {
    pub data: Array3<Complex64>,
    /// Frequencies in Hz along the second axis.
    pub frequencies: Vec<f64>,
    /// Whether the per-frequency wavelet amplitude is baked into the cube.
    pub wavelet_applied: bool,
}

impl ShotData {
    pub fn new(data: Array3<Complex64>, frequencies: Vec<f64>) -> Result<Self> {
        if data.dim().1 != frequencies.len() {
            return Err(MwiError::ShapeMismatch(format!(
                "cube has {} frequency slices for {} frequencies",
                data.dim().1,
                frequencies.len()
            )));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(MwiError::Numerical("shot data contains non-finite values".into()));
        }
        Ok(ShotData { data, frequencies, wavelet_applied: true })
    }

    pub fn zeros(n_sources: usize, frequencies: Vec<f64>, n_receivers: usize) -> Self {
        ShotData {
            data: Array3::from_elem((n_sources, frequencies.len(), n_receivers), Complex64::ZERO),
            frequencies,
            wavelet_applied: true,
        }
    }

    pub fn n_sources(&self) -> usize {
        self.data.dim().0
    }
    pub fn n_frequencies(&self) -> usize {
        self.data.dim().1
    }
    pub fn n_receivers(&self) -> usize {
        self.data.dim().2
    }

    /// Cube restricted to the given frequency indices.
    pub fn select_frequencies(&self, indices: &[usize]) -> ShotData {
        let (ns, _, nr) = self.data.dim();
        let mut out = Array3::from_elem((ns, indices.len(), nr), Complex64::ZERO);
        for (k, &fi) in indices.iter().enumerate() {
            for s in 0..ns {
                for r in 0..nr {
                    out[(s, k, r)] = self.data[(s, fi, r)];
                }
            }
        }
        ShotData {
            data: out,
            frequencies: indices.iter().map(|&i| self.frequencies[i]).collect(),
            wavelet_applied: self.wavelet_applied,
        }
    }

    /// Sum of squared moduli over the whole cube.
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    fn check_matches(&self, acq: &Acquisition) -> Result<()> {
        let (ns, nf, nr) = self.data.dim();
        if ns != acq.sources.len() || nf != acq.frequencies.len() || nr != acq.receivers.len() {
            return Err(MwiError::ShapeMismatch(format!(
                "data cube {}x{}x{} does not match acquisition {}x{}x{}",
                ns,
                nf,
                nr,
                acq.sources.len(),
                acq.frequencies.len(),
                acq.receivers.len()
            )));
        }
        Ok(())
    }
}

/// Misfit value with its gradient over the interior grid.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    /// `E = 1/2 sum |S(m)b - d|^2` over sources, frequencies, receivers.
    pub misfit: f64,
    /// `dE/dm` per interior cell, shape `(nz, nx)`.
    pub gradient: Array2<f64>,
    /// Undamped pseudo-Hessian diagonal `sum w^4 |u|^2`, shape `(nz, nx)`.
    pub pseudo_hessian: Option<Array2<f64>>,
}

/// How the adjoint source is formed from predictions and reference data.
#[derive(Clone, Copy)]
pub(crate) enum ResidualMode<'a> {
    /// No residual; forward modeling only.
    ForwardOnly,
    /// `r = pred - target`.
    Against(&'a ShotData),
    /// Fused multiplier update: the residual is taken against the updated
    /// multipliers `d_new = (d_prev + observed) - pred` without storing them.
    MwiFused { d_prev: &'a ShotData, observed: &'a ShotData },
    /// Unscaled augmented-Lagrangian residual against the updated
    /// multiplier `l_new = l_prev - mu (pred - observed)`.
    AlUnscaled { lambda_prev: &'a ShotData, observed: &'a ShotData, mu: f64, first: bool },
}

pub(crate) struct Evaluation {
    /// Wavelet-weighted predicted data.
    pub pred: ShotData,
    /// `1/2 sum |r_eff|^2` for the mode's effective residual.
    pub misfit_effective: f64,
    /// `1/2 sum |pred - observed|^2` when the mode carries observed data.
    pub misfit_observed: Option<f64>,
    pub gradient: Option<Array2<f64>>,
    pub pseudo_hessian: Option<Array2<f64>>,
}

/// Interior parent cell of a padded node (edge extension inverse).
fn parent(grid: &PaddedGrid, jz: usize, jx: usize) -> (usize, usize) {
    let iz = jz.saturating_sub(grid.pml).min(grid.nz - 1);
    let ix = jx.saturating_sub(grid.pml).min(grid.nx - 1);
    (iz, ix)
}

/// Plain transpose of the sampling operator: unit point values at the
/// receiver nodes (the `1/h^2`-scaled variant lives in `acquisition`).
fn place_at_receivers(values: &[Complex64], acq: &Acquisition, grid: PaddedGrid) -> Field {
    let mut f = Field::zeros(grid);
    for (&(ix, iz), &v) in acq.receivers.iter().zip(values) {
        let (px, pz) = grid.pad_index(ix, iz);
        f.values[(pz, px)] += v;
    }
    f
}

struct PerFrequency {
    pred: Array2<Complex64>, // (n_sources, n_receivers)
    e_eff: f64,
    e_obs: f64,
    gradient: Option<Array2<f64>>,
    phess: Option<Array2<f64>>,
}

/// One factorization per frequency, shared by all of its sources; fields
/// and factors are dropped as soon as the frequency is done.
pub(crate) fn evaluate(
    model: &Model,
    acq: &Acquisition,
    opts: &ModelingOptions,
    mode: ResidualMode,
    want_gradient: bool,
    want_phess: bool,
) -> Result<Evaluation> {
    acq.validate(model.nx, model.nz)?;
    match mode {
        ResidualMode::Against(t) => t.check_matches(acq)?,
        ResidualMode::MwiFused { d_prev, observed } => {
            d_prev.check_matches(acq)?;
            observed.check_matches(acq)?;
        }
        ResidualMode::AlUnscaled { lambda_prev, observed, .. } => {
            lambda_prev.check_matches(acq)?;
            observed.check_matches(acq)?;
        }
        ResidualMode::ForwardOnly => {}
    }

    let n_s = acq.sources.len();
    let n_r = acq.receivers.len();
    let per_freq: Vec<Result<PerFrequency>> = acq
        .frequencies
        .par_iter()
        .enumerate()
        .map(|(fi, &f_hz)| -> Result<PerFrequency> {
            let omega = 2.0 * std::f64::consts::PI * f_hz;
            let op = assemble(model, omega, opts)?;
            let fac = factorize(&op).map_err(|e| attach_context(e, fi))?;
            let grid = op.grid;
            let amp = Complex64::new(ricker_spectrum(acq.peak_hz, f_hz), 0.0);
            let mut pred = Array2::from_elem((n_s, n_r), Complex64::ZERO);
            let mut grad =
                want_gradient.then(|| Array2::from_elem((model.nz, model.nx), 0.0f64));
            let mut phess = want_phess.then(|| Array2::from_elem((model.nz, model.nx), 0.0f64));
            let mut e_eff = 0.0;
            let mut e_obs = 0.0;
            for (si, &src) in acq.sources.iter().enumerate() {
                let b = source_field(amp, src, grid);
                let u = solve_forward(&fac, &b).map_err(|e| attach_context(e, fi))?;
                let traces = sample(&u, acq);
                for (ri, &v) in traces.iter().enumerate() {
                    pred[(si, ri)] = v;
                }
                if let Some(ph) = phess.as_mut() {
                    let w4 = omega.powi(4);
                    for iz in 0..model.nz {
                        for ix in 0..model.nx {
                            ph[(iz, ix)] += w4 * u.at_interior(ix, iz).norm_sqr();
                        }
                    }
                }
                let residual: Option<Vec<Complex64>> = match mode {
                    ResidualMode::ForwardOnly => None,
                    ResidualMode::Against(t) => Some(
                        (0..n_r).map(|ri| traces[ri] - t.data[(si, fi, ri)]).collect(),
                    ),
                    ResidualMode::MwiFused { d_prev, observed } => Some(
                        (0..n_r)
                            .map(|ri| {
                                let d_new = (d_prev.data[(si, fi, ri)]
                                    + observed.data[(si, fi, ri)])
                                    - traces[ri];
                                traces[ri] - d_new
                            })
                            .collect(),
                    ),
                    ResidualMode::AlUnscaled { lambda_prev, observed, mu, first } => Some(
                        (0..n_r)
                            .map(|ri| {
                                let l = if first {
                                    lambda_prev.data[(si, fi, ri)]
                                } else {
                                    lambda_prev.data[(si, fi, ri)]
                                        - mu * (traces[ri] - observed.data[(si, fi, ri)])
                                };
                                mu * (traces[ri] - observed.data[(si, fi, ri)]) - l
                            })
                            .collect(),
                    ),
                };
                if let Some(r) = &residual {
                    e_eff += 0.5 * r.iter().map(|v| v.norm_sqr()).sum::<f64>();
                }
                match mode {
                    ResidualMode::MwiFused { observed, .. }
                    | ResidualMode::AlUnscaled { observed, .. } => {
                        e_obs += 0.5
                            * (0..n_r)
                                .map(|ri| (traces[ri] - observed.data[(si, fi, ri)]).norm_sqr())
                                .sum::<f64>();
                    }
                    ResidualMode::Against(t) => {
                        e_obs += 0.5
                            * (0..n_r)
                                .map(|ri| (traces[ri] - t.data[(si, fi, ri)]).norm_sqr())
                                .sum::<f64>();
                    }
                    ResidualMode::ForwardOnly => {}
                }
                if let (Some(g), Some(r)) = (grad.as_mut(), residual) {
                    let adj_src = place_at_receivers(&r, acq, grid);
                    let v = solve_adjoint(&fac, &adj_src).map_err(|e| attach_context(e, fi))?;
                    let w2 = omega * omega;
                    for jz in 0..grid.padded_nz() {
                        for jx in 0..grid.padded_nx() {
                            let s = op.mass_scale_at(jz, jx);
                            let c = s * u.values[(jz, jx)] * v.values[(jz, jx)].conj();
                            let (iz, ix) = parent(&grid, jz, jx);
                            g[(iz, ix)] += w2 * c.re;
                        }
                    }
                }
            }
            Ok(PerFrequency { pred, e_eff, e_obs, gradient: grad, phess })
        })
        .collect();

    // Deterministic reduction in frequency order.
    let mut pred = Array3::from_elem((n_s, acq.frequencies.len(), n_r), Complex64::ZERO);
    let mut misfit_effective = 0.0;
    let mut misfit_observed = 0.0;
    let mut gradient = want_gradient.then(|| Array2::from_elem((model.nz, model.nx), 0.0f64));
    let mut phess = want_phess.then(|| Array2::from_elem((model.nz, model.nx), 0.0f64));
    for (fi, pf) in per_freq.into_iter().enumerate() {
        let pf = pf?;
        for s in 0..n_s {
            for r in 0..n_r {
                pred[(s, fi, r)] = pf.pred[(s, r)];
            }
        }
        misfit_effective += pf.e_eff;
        misfit_observed += pf.e_obs;
        if let (Some(g), Some(pg)) = (gradient.as_mut(), pf.gradient) {
            *g += &pg;
        }
        if let (Some(p), Some(pp)) = (phess.as_mut(), pf.phess) {
            *p += &pp;
        }
    }
    let has_observed = !matches!(mode, ResidualMode::ForwardOnly);
    Ok(Evaluation {
        pred: ShotData {
            data: pred,
            frequencies: acq.frequencies.clone(),
            wavelet_applied: true,
        },
        misfit_effective,
        misfit_observed: has_observed.then_some(misfit_observed),
        gradient,
        pseudo_hessian: phess,
    })
}

fn attach_context(e: MwiError, freq_index: usize) -> MwiError {
    match e {
        MwiError::SingularOperator { .. } => e,
        other => MwiError::Numerical(format!("frequency index {freq_index}: {other}")),
    }
}

/// Model the wavelet-weighted data `S(m) b` for every source and frequency.
pub fn forward_map(model: &Model, acq: &Acquisition, opts: &ModelingOptions) -> Result<ShotData> {
    Ok(evaluate(model, acq, opts, ResidualMode::ForwardOnly, false, false)?.pred)
}

/// Least-squares misfit against `target` and its adjoint-state gradient.
pub fn misfit_and_gradient(
    model: &Model,
    acq: &Acquisition,
    target: &ShotData,
    opts: &ModelingOptions,
) -> Result<GradientBundle> {
    let ev = evaluate(model, acq, opts, ResidualMode::Against(target), true, true)?;
    Ok(GradientBundle {
        misfit: ev.misfit_effective,
        gradient: ev.gradient.expect("gradient requested"),
        pseudo_hessian: ev.pseudo_hessian,
    })
}

/// First-order data perturbation `J dm` for an interior perturbation grid.
pub fn jacobian_apply(
    model: &Model,
    acq: &Acquisition,
    dm: &Array2<f64>,
    opts: &ModelingOptions,
) -> Result<ShotData> {
    acq.validate(model.nx, model.nz)?;
    if dm.dim() != (model.nz, model.nx) {
        return Err(MwiError::ShapeMismatch(format!(
            "perturbation grid {:?} does not match the model {}x{}",
            dm.dim(),
            model.nz,
            model.nx
        )));
    }
    let n_s = acq.sources.len();
    let n_r = acq.receivers.len();
    let per_freq: Vec<Result<Array2<Complex64>>> = acq
        .frequencies
        .par_iter()
        .map(|&f_hz| -> Result<Array2<Complex64>> {
            let omega = 2.0 * std::f64::consts::PI * f_hz;
            let op = assemble(model, omega, opts)?;
            let fac = factorize(&op)?;
            let grid = op.grid;
            let amp = Complex64::new(ricker_spectrum(acq.peak_hz, f_hz), 0.0);
            let w2 = omega * omega;
            let mut block = Array2::from_elem((n_s, n_r), Complex64::ZERO);
            for (si, &src) in acq.sources.iter().enumerate() {
                let b = source_field(amp, src, grid);
                let u = solve_forward(&fac, &b)?;
                // J dm = P A^{-1} (w^2 s.ext(dm).u)
                let mut rhs = Field::zeros(grid);
                for jz in 0..grid.padded_nz() {
                    for jx in 0..grid.padded_nx() {
                        let (iz, ix) = parent(&grid, jz, jx);
                        rhs.values[(jz, jx)] =
                            w2 * dm[(iz, ix)] * op.mass_scale_at(jz, jx) * u.values[(jz, jx)];
                    }
                }
                let w = solve_forward(&fac, &rhs)?;
                for (ri, v) in sample(&w, acq).into_iter().enumerate() {
                    block[(si, ri)] = v;
                }
            }
            Ok(block)
        })
        .collect();
    let mut data = Array3::from_elem((n_s, acq.frequencies.len(), n_r), Complex64::ZERO);
    for (fi, block) in per_freq.into_iter().enumerate() {
        let block = block?;
        for s in 0..n_s {
            for r in 0..n_r {
                data[(s, fi, r)] = block[(s, r)];
            }
        }
    }
    ShotData::new(data, acq.frequencies.clone())
}

/// Diagonal pseudo-Hessian `sum over (s, f) of |w^2 u(cell)|^2`, undamped.
pub fn pseudo_hessian_diag(
    model: &Model,
    acq: &Acquisition,
    opts: &ModelingOptions,
) -> Result<Array2<f64>> {
    let ev = evaluate(model, acq, opts, ResidualMode::ForwardOnly, false, true)?;
    Ok(ev.pseudo_hessian.expect("pseudo-Hessian requested"))
}

/// Fraction of the mean Gram diagonal used for the default data-domain
/// damping.
const DEFAULT_GN_EPS_FRACTION: f64 = 1e-2;

/// Gradient with the residuals filtered through the inverse data-domain
/// Gauss-Newton block `Q = S S^H + eps I`, built once per frequency from
/// `n_r` adjoint solves and reused across all sources. Paired with the
/// pseudo-Hessian diagonal as the image-space metric, the resulting step
/// reproduces the damped Gauss-Newton step exactly.
pub fn gn_modified_gradient(
    model: &Model,
    acq: &Acquisition,
    target: &ShotData,
    eps: Option<f64>,
    opts: &ModelingOptions,
) -> Result<GradientBundle> {
    acq.validate(model.nx, model.nz)?;
    target.check_matches(acq)?;
    if let Some(e) = eps {
        if !(e > 0.0) {
            return Err(MwiError::InvalidConfig(format!("gn damping must be positive, got {e}")));
        }
    }
    let n_s = acq.sources.len();
    let n_r = acq.receivers.len();
    let per_freq: Vec<Result<PerFrequency>> = acq
        .frequencies
        .par_iter()
        .enumerate()
        .map(|(fi, &f_hz)| -> Result<PerFrequency> {
            let omega = 2.0 * std::f64::consts::PI * f_hz;
            let op = assemble(model, omega, opts)?;
            let fac = factorize(&op)?;
            let grid = op.grid;
            // Columns of S^H: one adjoint solve per receiver, shared by all
            // sources of this frequency.
            let mut columns: Vec<Field> = Vec::with_capacity(n_r);
            for r in 0..n_r {
                let mut e_r = vec![Complex64::ZERO; n_r];
                e_r[r] = Complex64::new(1.0, 0.0);
                columns.push(solve_adjoint(&fac, &place_at_receivers(&e_r, acq, grid))?);
            }
            let mut gram = vec![Complex64::ZERO; n_r * n_r];
            for r in 0..n_r {
                for q in 0..n_r {
                    gram[r * n_r + q] = columns[r]
                        .values
                        .iter()
                        .zip(columns[q].values.iter())
                        .map(|(a, b)| a.conj() * b)
                        .sum();
                }
            }
            drop(columns);
            let mean_diag =
                (0..n_r).map(|r| gram[r * n_r + r].re).sum::<f64>() / n_r as f64;
            let eps_f = eps.unwrap_or(DEFAULT_GN_EPS_FRACTION * mean_diag.max(f64::MIN_POSITIVE));
            for r in 0..n_r {
                gram[r * n_r + r] += Complex64::new(eps_f, 0.0);
            }
            let chol = CholeskyHermitian::new(gram, n_r).map_err(|_| {
                MwiError::Numerical(format!(
                    "data-domain Gauss-Newton block not positive definite at {f_hz} Hz"
                ))
            })?;

            let amp = Complex64::new(ricker_spectrum(acq.peak_hz, f_hz), 0.0);
            let w2 = omega * omega;
            let mut pred = Array2::from_elem((n_s, n_r), Complex64::ZERO);
            let mut grad = Array2::from_elem((model.nz, model.nx), 0.0f64);
            let mut phess = Array2::from_elem((model.nz, model.nx), 0.0f64);
            let mut e_plain = 0.0;
            for (si, &src) in acq.sources.iter().enumerate() {
                let b = source_field(amp, src, grid);
                let u = solve_forward(&fac, &b)?;
                let traces = sample(&u, acq);
                let w4 = omega.powi(4);
                for iz in 0..model.nz {
                    for ix in 0..model.nx {
                        phess[(iz, ix)] += w4 * u.at_interior(ix, iz).norm_sqr();
                    }
                }
                let mut r_vec: Vec<Complex64> = (0..n_r)
                    .map(|ri| {
                        pred[(si, ri)] = traces[ri];
                        traces[ri] - target.data[(si, fi, ri)]
                    })
                    .collect();
                e_plain += 0.5 * r_vec.iter().map(|v| v.norm_sqr()).sum::<f64>();
                chol.solve_in_place(&mut r_vec);
                let adj_src = place_at_receivers(&r_vec, acq, grid);
                let v = solve_adjoint(&fac, &adj_src)?;
                for jz in 0..grid.padded_nz() {
                    for jx in 0..grid.padded_nx() {
                        let s = op.mass_scale_at(jz, jx);
                        let c = s * u.values[(jz, jx)] * v.values[(jz, jx)].conj();
                        let (iz, ix) = parent(&grid, jz, jx);
                        grad[(iz, ix)] += w2 * c.re;
                    }
                }
            }
            Ok(PerFrequency {
                pred,
                e_eff: e_plain,
                e_obs: e_plain,
                gradient: Some(grad),
                phess: Some(phess),
            })
        })
        .collect();

    let mut misfit = 0.0;
    let mut gradient = Array2::from_elem((model.nz, model.nx), 0.0f64);
    let mut phess = Array2::from_elem((model.nz, model.nx), 0.0f64);
    for pf in per_freq {
        let pf = pf?;
        misfit += pf.e_eff;
        gradient += &pf.gradient.expect("gradient computed");
        phess += &pf.phess.expect("pseudo-Hessian computed");
    }
    Ok(GradientBundle { misfit, gradient, pseudo_hessian: Some(phess) })
}

/// Dense Cholesky factors of a Hermitian positive-definite matrix, row-major.
struct CholeskyHermitian {
    l: Vec<Complex64>,
    n: usize,
}

impl CholeskyHermitian {
    fn new(a: Vec<Complex64>, n: usize) -> std::result::Result<Self, ()> {
        let mut l = a;
        for j in 0..n {
            let mut d = l[j * n + j].re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(());
            }
            let dj = d.sqrt();
            l[j * n + j] = Complex64::new(dj, 0.0);
            for i in j + 1..n {
                let mut v = l[i * n + j];
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = v / dj;
            }
        }
        Ok(CholeskyHermitian { l, n })
    }

    /// Solve `L L^H x = b` in place.
    fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= self.l[i * n + k] * b[k];
            }
            b[i] = v / self.l[i * n + i].re;
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in i + 1..n {
                v -= self.l[k * n + i].conj() * b[k];
            }
            b[i] = v / self.l[i * n + i].re;
        }
    }
}

/// Outcome of [`gradient_fd_check`].
#[derive(Debug, Clone, Copy)]
pub struct FdCheckResult {
    pub max_rel_error: f64,
    pub cells_checked: usize,
}

/// Compare the adjoint-state gradient against central finite differences
/// on a seeded random-perturbed homogeneous model. Probed cells stay at
/// least three nodes away from every source and receiver so the
/// differencing step never interacts with a load singularity; the step is
/// `1e-8 |m(cell)|`.
pub fn gradient_fd_check(
    nx: usize,
    nz: usize,
    n_sources: usize,
    n_receivers: usize,
    n_frequencies: usize,
    cells: usize,
    seed: u64,
) -> Result<FdCheckResult> {
    use crate::acquisition::{default_band, Side};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let build = |seed_shift: u64| -> Result<Model> {
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ seed_shift);
        let mut m = crate::model::make_homogeneous(nx, nz, 20.0, 2000.0)?;
        m.m.mapv_inplace(|v| v * (1.0 + 0.08 * r.gen_range(-1.0..1.0)));
        let lo = m.m.iter().cloned().fold(f64::MAX, f64::min) * 0.5;
        let hi = m.m.iter().cloned().fold(f64::MIN, f64::max) * 2.0;
        m.m_min.fill(lo);
        m.m_max.fill(hi);
        Ok(m)
    };
    let model = build(0)?;
    let truth = build(0x9e3779b97f4a7c15)?;
    let freqs = default_band(10.0, n_frequencies.max(1), None);
    let acq = Acquisition::lines(nx, nz, n_sources, Side::Top, n_receivers, Side::Bottom, 10.0, freqs)?;
    let opts = ModelingOptions::default();
    let target = forward_map(&truth, &acq, &opts)?;
    let bundle = misfit_and_gradient(&model, &acq, &target, &opts)?;

    let far_from_loads = |ix: usize, iz: usize| {
        acq.sources.iter().chain(acq.receivers.iter()).all(|&(sx, sz)| {
            let dx = sx.abs_diff(ix);
            let dz = sz.abs_diff(iz);
            dx.max(dz) >= 3
        })
    };
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut guard = 0usize;
    while checked < cells {
        guard += 1;
        if guard > 100 * cells {
            return Err(MwiError::InvalidConfig(
                "grid too small to place probe cells away from the acquisition".into(),
            ));
        }
        let ix = rng.gen_range(0..nx);
        let iz = rng.gen_range(0..nz);
        if !far_from_loads(ix, iz) {
            continue;
        }
        let step = 1e-8 * model.m[(iz, ix)].abs();
        let mut plus = model.clone();
        plus.m[(iz, ix)] += step;
        let mut minus = model.clone();
        minus.m[(iz, ix)] -= step;
        let ep = evaluate(&plus, &acq, &opts, ResidualMode::Against(&target), false, false)?
            .misfit_effective;
        let em = evaluate(&minus, &acq, &opts, ResidualMode::Against(&target), false, false)?
            .misfit_effective;
        let fd = (ep - em) / (2.0 * step);
        let ad = bundle.gradient[(iz, ix)];
        max_rel = max_rel.max((fd - ad).abs() / ad.abs().max(1e-30));
        checked += 1;
    }
    Ok(FdCheckResult { max_rel_error: max_rel, cells_checked: checked })
}

/// Solve the factored frequency once for an arbitrary interior source;
/// exposed for oracles that need raw Green's columns.
pub fn green_column(
    fac: &Factorization,
    node: (usize, usize),
    amplitude: Complex64,
) -> Result<Field> {
    let b = source_field(amplitude, node, fac.grid);
    solve_forward(fac, &b)
}
