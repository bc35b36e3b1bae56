//! Acquisition geometry, receiver sampling, source injection, and the
//! source spectrum.
//!
//! Sources and receivers snap to the nearest interior grid node. Sampling
//! reads nodal values; injection places point loads scaled by `1/h^2` so a
//! unit value approximates a continuous delta. The pair is exactly adjoint
//! under the cell-area-weighted field inner product `h^2 sum(conj(u) v)`.

use num_complex::Complex64;

use crate::error::{MwiError, Result};
use crate::helmholtz::{Field, PaddedGrid};
use crate::model::Model;

/// Edge of the model a source or receiver line runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

impl std::str::FromStr for Side {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "top" => Ok(Side::Top),
            "bottom" => Ok(Side::Bottom),
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(format!("unknown side '{other}' (expected top/bottom/left/right)")),
        }
    }
}

/// Source and receiver nodes plus the active frequency set.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    /// Interior `(ix, iz)` node indices of the sources.
    pub sources: Vec<(usize, usize)>,
    /// Interior `(ix, iz)` node indices of the receivers.
    pub receivers: Vec<(usize, usize)>,
    /// Peak frequency of the source wavelet in Hz.
    pub peak_hz: f64,
    /// Active frequencies in Hz.
    pub frequencies: Vec<f64>,
}

/// Points per wavelength below which the second-order stencil disperses
/// visibly.
pub const MIN_POINTS_PER_WAVELENGTH: f64 = 6.0;

/// A frequency violating the dispersion rule for the slowest admissible
/// medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionWarning {
    pub freq_hz: f64,
    pub points_per_wavelength: f64,
}

/// Equally spaced node indices along a line of `count` nodes. Positions are
/// laid out in physical coordinates (endpoints inclusive) and snapped to
/// the nearest node, so oversampled lines simply repeat nodes.
fn spaced_line(n_points: usize, count: usize) -> Vec<usize> {
    assert!(count >= 1 && n_points >= 1);
    if count == 1 {
        return vec![n_points / 2];
    }
    (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            (t * (n_points - 1) as f64).round() as usize
        })
        .collect()
}

impl Acquisition {
    /// Lines of equally spaced sources and receivers along model edges.
    pub fn lines(
        nx: usize,
        nz: usize,
        n_sources: usize,
        source_side: Side,
        n_receivers: usize,
        receiver_side: Side,
        peak_hz: f64,
        frequencies: Vec<f64>,
    ) -> Result<Self> {
        if n_sources == 0 || n_receivers == 0 {
            return Err(MwiError::InvalidAcquisition("need at least one source and receiver".into()));
        }
        let place = |side: Side, count: usize| -> Vec<(usize, usize)> {
            match side {
                Side::Top => spaced_line(nx, count).into_iter().map(|ix| (ix, 0)).collect(),
                Side::Bottom => spaced_line(nx, count).into_iter().map(|ix| (ix, nz - 1)).collect(),
                Side::Left => spaced_line(nz, count).into_iter().map(|iz| (0, iz)).collect(),
                Side::Right => spaced_line(nz, count).into_iter().map(|iz| (nx - 1, iz)).collect(),
            }
        };
        let acq = Acquisition {
            sources: place(source_side, n_sources),
            receivers: place(receiver_side, n_receivers),
            peak_hz,
            frequencies,
        };
        acq.validate(nx, nz)?;
        Ok(acq)
    }

    /// Check positions against the interior grid and frequencies for
    /// positivity.
    pub fn validate(&self, nx: usize, nz: usize) -> Result<()> {
        if self.sources.is_empty() || self.receivers.is_empty() {
            return Err(MwiError::InvalidAcquisition("need at least one source and receiver".into()));
        }
        for &(ix, iz) in self.sources.iter().chain(self.receivers.iter()) {
            if ix >= nx || iz >= nz {
                return Err(MwiError::InvalidAcquisition(format!(
                    "position ({ix}, {iz}) outside the {nx}x{nz} interior grid"
                )));
            }
        }
        if !(self.peak_hz > 0.0) || !self.peak_hz.is_finite() {
            return Err(MwiError::InvalidAcquisition(format!(
                "peak frequency must be positive, got {}",
                self.peak_hz
            )));
        }
        if self.frequencies.is_empty() {
            return Err(MwiError::InvalidAcquisition("frequency set must be nonempty".into()));
        }
        if self.frequencies.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(MwiError::InvalidAcquisition("frequencies must be positive".into()));
        }
        Ok(())
    }

    /// Frequencies that violate the six-points-per-wavelength rule for the
    /// slowest medium the model bounds admit.
    pub fn dispersion_report(&self, model: &Model) -> Vec<DispersionWarning> {
        let m_hi = model.m_max.iter().cloned().fold(f64::MIN, f64::max);
        let v_slowest = 1.0 / m_hi.sqrt();
        self.frequencies
            .iter()
            .filter_map(|&f| {
                let ppw = v_slowest / (f * model.h);
                (ppw < MIN_POINTS_PER_WAVELENGTH)
                    .then_some(DispersionWarning { freq_hz: f, points_per_wavelength: ppw })
            })
            .collect()
    }

    /// Acquisition restricted to a subset of its frequencies (by value).
    /// Returns the indices of the retained frequencies alongside.
    pub fn with_frequencies(&self, freqs: &[f64]) -> Result<(Self, Vec<usize>)> {
        let mut indices = Vec::with_capacity(freqs.len());
        for &f in freqs {
            let idx = self
                .frequencies
                .iter()
                .position(|&g| (g - f).abs() <= 1e-9 * g.abs().max(1.0))
                .ok_or_else(|| {
                    MwiError::InvalidAcquisition(format!("frequency {f} Hz not in the acquisition"))
                })?;
            indices.push(idx);
        }
        let mut acq = self.clone();
        acq.frequencies = freqs.to_vec();
        Ok((acq, indices))
    }
}

/// Zero-phase wavelet amplitude spectrum, peaking at `f_p`:
/// `W(f) = (2/sqrt(pi)) * f^2/f_p^3 * exp(-(f/f_p)^2)`.
pub fn ricker_spectrum(f_p: f64, f: f64) -> f64 {
    assert!(f_p > 0.0 && f >= 0.0, "ricker_spectrum needs f_p > 0 and f >= 0");
    let r = f / f_p;
    2.0 / std::f64::consts::PI.sqrt() * (f * f) / (f_p * f_p * f_p) * (-r * r).exp()
}

/// Default inversion band: `n` frequencies spanning `0.4 f_p ..= 1.6 f_p`,
/// with the top end capped by the dispersion rule when `cap_hz` is given.
pub fn default_band(peak_hz: f64, n: usize, cap_hz: Option<f64>) -> Vec<f64> {
    assert!(n >= 1 && peak_hz > 0.0);
    let lo = 0.4 * peak_hz;
    let mut hi = 1.6 * peak_hz;
    if let Some(cap) = cap_hz {
        hi = hi.min(cap);
    }
    if n == 1 {
        return vec![peak_hz.min(hi).max(lo)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Dispersion-limited top frequency for a model: the slowest admissible
/// velocity over `MIN_POINTS_PER_WAVELENGTH * h`.
pub fn dispersion_cap_hz(model: &Model) -> f64 {
    let m_hi = model.m_max.iter().cloned().fold(f64::MIN, f64::max);
    (1.0 / m_hi.sqrt()) / (MIN_POINTS_PER_WAVELENGTH * model.h)
}

/// Read nodal values at the receivers.
pub fn sample(field: &Field, acq: &Acquisition) -> Vec<Complex64> {
    acq.receivers.iter().map(|&(ix, iz)| field.at_interior(ix, iz)).collect()
}

/// Place point loads at the receivers, scaled by `1/h^2` to match the
/// source discretization.
pub fn inject(values: &[Complex64], acq: &Acquisition, grid: PaddedGrid) -> Result<Field> {
    if values.len() != acq.receivers.len() {
        return Err(MwiError::ShapeMismatch(format!(
            "{} values for {} receivers",
            values.len(),
            acq.receivers.len()
        )));
    }
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let mut f = Field::zeros(grid);
    for (&(ix, iz), &v) in acq.receivers.iter().zip(values) {
        let (px, pz) = grid.pad_index(ix, iz);
        f.values[(pz, px)] += v * inv_h2;
    }
    Ok(f)
}

/// Point-load source field for one source node with a given amplitude.
pub fn source_field(amplitude: Complex64, node: (usize, usize), grid: PaddedGrid) -> Field {
    let mut f = Field::zeros(grid);
    let (px, pz) = grid.pad_index(node.0, node.1);
    f.values[(pz, px)] = amplitude / (grid.h * grid.h);
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn toy_acq(nx: usize, nz: usize) -> Acquisition {
        Acquisition::lines(nx, nz, 3, Side::Top, 5, Side::Bottom, 10.0, vec![5.0, 7.0]).unwrap()
    }

    #[test]
    fn sample_inject_are_adjoint_under_cell_area_inner_product() {
        let grid = PaddedGrid { nx: 11, nz: 9, pml: 8, h: 12.5 };
        let acq = toy_acq(11, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut u = Field::zeros(grid);
        u.values
            .mapv_inplace(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let d: Vec<Complex64> = (0..acq.receivers.len())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let pu = sample(&u, &acq);
        let ptd = inject(&d, &acq, grid).unwrap();
        let lhs: Complex64 = pu.iter().zip(d.iter()).map(|(a, b)| a.conj() * b).sum();
        let rhs: Complex64 = u
            .values
            .iter()
            .zip(ptd.values.iter())
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * (grid.h * grid.h);
        assert!((lhs - rhs).norm() <= 1e-14 * lhs.norm().max(1.0));
    }

    #[test]
    fn unit_field_samples_to_ones() {
        let grid = PaddedGrid { nx: 11, nz: 9, pml: 8, h: 10.0 };
        let acq = toy_acq(11, 9);
        let mut u = Field::zeros(grid);
        u.values.fill(Complex64::new(1.0, 0.0));
        for v in sample(&u, &acq) {
            assert_eq!(v, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn inject_basis_vector_hits_one_node() {
        let grid = PaddedGrid { nx: 11, nz: 9, pml: 8, h: 10.0 };
        let acq = toy_acq(11, 9);
        let mut e1 = vec![Complex64::ZERO; acq.receivers.len()];
        e1[0] = Complex64::new(1.0, 0.0);
        let f = inject(&e1, &acq, grid).unwrap();
        let (ix, iz) = acq.receivers[0];
        let (px, pz) = grid.pad_index(ix, iz);
        let nonzero: Vec<_> = f
            .values
            .indexed_iter()
            .filter(|(_, v)| **v != Complex64::ZERO)
            .map(|(idx, _)| idx)
            .collect();
        assert_eq!(nonzero, vec![(pz, px)]);
        assert_relative_eq!(f.values[(pz, px)].re, 1.0 / 100.0);
    }

    #[test]
    fn ricker_shape() {
        assert_eq!(ricker_spectrum(10.0, 0.0), 0.0);
        // argmax at f_p, checked by a fine scan
        let fp = 10.0;
        let mut best = (0.0, 0.0);
        for i in 1..4000 {
            let f = i as f64 * 0.01;
            let w = ricker_spectrum(fp, f);
            if w > best.1 {
                best = (f, w);
            }
        }
        assert!((best.0 - fp).abs() < 0.011, "peak at {} not {}", best.0, fp);
        // value at the peak
        let expected = 2.0 / std::f64::consts::PI.sqrt() * (-1.0f64).exp() / fp;
        assert_relative_eq!(ricker_spectrum(fp, fp), expected, max_relative = 1e-13);
    }

    #[test]
    fn line_placement_snaps_and_oversamples() {
        // 85 receivers across 68 columns: duplicates allowed, coverage full.
        let acq =
            Acquisition::lines(68, 85, 14, Side::Top, 85, Side::Bottom, 10.0, vec![5.0]).unwrap();
        assert_eq!(acq.sources.len(), 14);
        assert_eq!(acq.receivers.len(), 85);
        assert_eq!(acq.sources.first().unwrap(), &(0, 0));
        assert_eq!(acq.sources.last().unwrap(), &(67, 0));
        assert_eq!(acq.receivers.first().unwrap(), &(0, 84));
        assert_eq!(acq.receivers.last().unwrap(), &(67, 84));
        assert!(acq.sources.iter().all(|&(_, iz)| iz == 0));
        assert!(acq.receivers.iter().all(|&(_, iz)| iz == 84));
    }

    #[test]
    fn rejects_bad_geometry_and_frequencies() {
        assert!(Acquisition::lines(10, 10, 0, Side::Top, 5, Side::Bottom, 10.0, vec![5.0]).is_err());
        let mut acq = toy_acq(10, 10);
        acq.sources[0] = (10, 0);
        assert!(acq.validate(10, 10).is_err());
        let mut acq = toy_acq(10, 10);
        acq.frequencies = vec![-1.0];
        assert!(acq.validate(10, 10).is_err());
        let mut acq = toy_acq(10, 10);
        acq.frequencies.clear();
        assert!(acq.validate(10, 10).is_err());
    }

    #[test]
    fn dispersion_report_flags_high_frequencies() {
        let model = crate::model::make_camembert(71.0, 0.4).unwrap();
        let acq = Acquisition::lines(68, 85, 2, Side::Top, 2, Side::Bottom, 10.0, vec![4.0, 16.0])
            .unwrap();
        let report = acq.dispersion_report(&model);
        assert_eq!(report.len(), 1);
        assert_relative_eq!(report[0].freq_hz, 16.0);
        assert!(report[0].points_per_wavelength < 6.0);
        // 4 Hz at 71 m and 4 km/s is ~14 points per wavelength: fine.
    }

    #[test]
    fn default_band_spans_and_caps() {
        let band = default_band(10.0, 8, None);
        assert_eq!(band.len(), 8);
        assert_relative_eq!(band[0], 4.0);
        assert_relative_eq!(band[7], 16.0);
        let capped = default_band(10.0, 8, Some(9.0));
        assert_relative_eq!(capped[7], 9.0);
        assert!(capped.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn frequency_subset_selection() {
        let acq = toy_acq(11, 9);
        let (sub, idx) = acq.with_frequencies(&[7.0]).unwrap();
        assert_eq!(sub.frequencies, vec![7.0]);
        assert_eq!(idx, vec![1]);
        assert!(acq.with_frequencies(&[9.0]).is_err());
    }
}
