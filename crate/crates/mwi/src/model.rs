//! Subsurface models on a regular grid of squared slowness.
//!
//! Models store `m = 1/v^2` in s²/m² because that is the quantity the wave
//! operator is linear in; velocities appear only at generator and file
//! boundaries. Grids are row-major `nz x nx` with z increasing downward.

use ndarray::Array2;

use crate::error::{MwiError, Result};

/// Squared-slowness grid with elementwise box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub nx: usize,
    pub nz: usize,
    /// Grid spacing in meters; cells are square.
    pub h: f64,
    /// Squared slowness, shape `(nz, nx)`.
    pub m: Array2<f64>,
    /// Lower bound on `m`, same shape.
    pub m_min: Array2<f64>,
    /// Upper bound on `m`, same shape.
    pub m_max: Array2<f64>,
}

/// Number of grid points covering a physical extent at spacing `h`.
///
/// The count is the smallest point grid that spans the extent, with a small
/// guard so exact multiples do not round up from floating-point noise:
/// 4.8 km at 35.5 m gives 136 points, 9 km at 30 m gives 300.
pub fn points_for_extent(extent_m: f64, h: f64) -> usize {
    (extent_m / h - 1e-9).ceil() as usize
}

impl Model {
    /// Build a model from a squared-slowness grid and scalar bounds.
    pub fn new(h: f64, m: Array2<f64>, m_lo: f64, m_hi: f64) -> Result<Self> {
        let (nz, nx) = m.dim();
        let lo = Array2::from_elem((nz, nx), m_lo);
        let hi = Array2::from_elem((nz, nx), m_hi);
        Self::with_bound_grids(h, m, lo, hi)
    }

    /// Build a model with full bound grids.
    pub fn with_bound_grids(
        h: f64,
        m: Array2<f64>,
        m_min: Array2<f64>,
        m_max: Array2<f64>,
    ) -> Result<Self> {
        let (nz, nx) = m.dim();
        if nx < 3 || nz < 3 {
            return Err(MwiError::InvalidModel(format!(
                "grid must be at least 3x3, got {nx}x{nz}"
            )));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(MwiError::InvalidModel(format!("spacing must be positive, got {h}")));
        }
        if m.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(MwiError::InvalidModel(
                "squared slowness must be strictly positive and finite".into(),
            ));
        }
        if m_min.dim() != (nz, nx) || m_max.dim() != (nz, nx) {
            return Err(MwiError::ShapeMismatch("bound grids must match the model grid".into()));
        }
        if m_min
            .iter()
            .zip(m_max.iter())
            .any(|(&lo, &hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(MwiError::InvalidModel("bounds must satisfy m_min <= m_max".into()));
        }
        Ok(Model { nx, nz, h, m, m_min, m_max })
    }

    /// Replace the box bounds with scalar velocity bounds (m/s).
    pub fn with_velocity_bounds(mut self, v_min: f64, v_max: f64) -> Result<Self> {
        if !(0.0 < v_min && v_min <= v_max) {
            return Err(MwiError::InvalidModel(format!(
                "need 0 < v_min <= v_max, got {v_min}, {v_max}"
            )));
        }
        // Fast medium = small squared slowness.
        self.m_min.fill(1.0 / (v_max * v_max));
        self.m_max.fill(1.0 / (v_min * v_min));
        Ok(self)
    }

    /// Velocity grid in m/s (`v = 1/sqrt(m)`).
    pub fn velocity(&self) -> Array2<f64> {
        self.m.mapv(|m| 1.0 / m.sqrt())
    }

    /// Smallest velocity anywhere in the model.
    pub fn min_velocity(&self) -> f64 {
        let m_max = self.m.iter().cloned().fold(f64::MIN, f64::max);
        1.0 / m_max.sqrt()
    }

    /// Largest velocity anywhere in the model.
    pub fn max_velocity(&self) -> f64 {
        let m_min = self.m.iter().cloned().fold(f64::MAX, f64::min);
        1.0 / m_min.sqrt()
    }

    /// Range `max(m_max) - min(m_min)` used by the automatic step rule.
    pub fn bound_range(&self) -> f64 {
        let hi = self.m_max.iter().cloned().fold(f64::MIN, f64::max);
        let lo = self.m_min.iter().cloned().fold(f64::MAX, f64::min);
        hi - lo
    }

    /// Root-mean-square difference to another model over all cells.
    pub fn rms_error(&self, other: &Model) -> f64 {
        assert_eq!(self.m.dim(), other.m.dim(), "rms_error needs equal grids");
        let n = (self.nx * self.nz) as f64;
        let sum: f64 = self
            .m
            .iter()
            .zip(other.m.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        (sum / n).sqrt()
    }
}

/// Constant-velocity model; every cell holds `1/v^2`.
pub fn make_homogeneous(nx: usize, nz: usize, h: f64, v: f64) -> Result<Model> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(MwiError::InvalidModel(format!("velocity must be positive, got {v}")));
    }
    let m = Array2::from_elem((nz, nx), 1.0 / (v * v));
    let mv = 1.0 / (v * v);
    Model::new(h, m, mv, mv)
}

/// Extents of the transmission test model: 4.8 km wide, 6 km deep.
pub const CAMEMBERT_WIDTH_M: f64 = 4800.0;
pub const CAMEMBERT_DEPTH_M: f64 = 6000.0;
pub const CAMEMBERT_BACKGROUND_MS: f64 = 4000.0;
pub const CAMEMBERT_DISK_MS: f64 = 4600.0;
/// Default disk diameter as a fraction of model width.
pub const CAMEMBERT_DISK_FRACTION: f64 = 0.4;

/// Circular high-velocity anomaly centered in a homogeneous background.
///
/// `disk_fraction` is the disk diameter over the model width; pass
/// [`CAMEMBERT_DISK_FRACTION`] for the default geometry.
pub fn make_camembert(h: f64, disk_fraction: f64) -> Result<Model> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(MwiError::InvalidModel(format!("spacing must be positive, got {h}")));
    }
    if !(disk_fraction > 0.0 && disk_fraction < 1.0) {
        return Err(MwiError::InvalidModel(format!(
            "disk fraction must lie in (0,1), got {disk_fraction}"
        )));
    }
    let nx = points_for_extent(CAMEMBERT_WIDTH_M, h);
    let nz = points_for_extent(CAMEMBERT_DEPTH_M, h);
    if nx < 3 || nz < 3 {
        return Err(MwiError::InvalidModel(format!(
            "spacing {h} m too coarse for {CAMEMBERT_WIDTH_M} x {CAMEMBERT_DEPTH_M} m"
        )));
    }
    let width = (nx - 1) as f64 * h;
    let depth = (nz - 1) as f64 * h;
    let (xc, zc) = (0.5 * width, 0.5 * depth);
    let radius = 0.5 * disk_fraction * width;
    let m_bg = 1.0 / (CAMEMBERT_BACKGROUND_MS * CAMEMBERT_BACKGROUND_MS);
    let m_disk = 1.0 / (CAMEMBERT_DISK_MS * CAMEMBERT_DISK_MS);
    let m = Array2::from_shape_fn((nz, nx), |(iz, ix)| {
        let dx = ix as f64 * h - xc;
        let dz = iz as f64 * h - zc;
        if dx * dx + dz * dz <= radius * radius {
            m_disk
        } else {
            m_bg
        }
    });
    Model::new(h, m, m_disk, m_bg)
}

/// Extents of the reflection test model: 9 km wide, 1.5 km deep.
pub const TWO_LAYER_WIDTH_M: f64 = 9000.0;
pub const TWO_LAYER_DEPTH_M: f64 = 1500.0;
pub const TWO_LAYER_TOP_MS: f64 = 2000.0;
pub const TWO_LAYER_BOTTOM_MS: f64 = 4000.0;
/// Depth of the layer interface in meters.
pub const TWO_LAYER_INTERFACE_M: f64 = 600.0;

/// Two flat layers: 0.6 km at 2.0 km/s over 0.9 km at 4.0 km/s.
pub fn make_two_layer(h: f64) -> Result<Model> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(MwiError::InvalidModel(format!("spacing must be positive, got {h}")));
    }
    let nx = points_for_extent(TWO_LAYER_WIDTH_M, h);
    let nz = points_for_extent(TWO_LAYER_DEPTH_M, h);
    if nx < 3 || nz < 3 {
        return Err(MwiError::InvalidModel(format!(
            "spacing {h} m too coarse for {TWO_LAYER_WIDTH_M} x {TWO_LAYER_DEPTH_M} m"
        )));
    }
    let m_top = 1.0 / (TWO_LAYER_TOP_MS * TWO_LAYER_TOP_MS);
    let m_bot = 1.0 / (TWO_LAYER_BOTTOM_MS * TWO_LAYER_BOTTOM_MS);
    let m = Array2::from_shape_fn((nz, nx), |(iz, _)| {
        if (iz as f64) * h < TWO_LAYER_INTERFACE_M {
            m_top
        } else {
            m_bot
        }
    });
    Model::new(h, m, m_bot, m_top)
}

/// Elementwise clamp of `m` into `[m_min, m_max]`; idempotent.
pub fn project_bounds(model: &Model) -> Model {
    let mut out = model.clone();
    for ((v, &lo), &hi) in out.m.iter_mut().zip(model.m_min.iter()).zip(model.m_max.iter()) {
        *v = v.clamp(lo, hi);
    }
    out
}

/// Resample a model by a factor of 0.5 (2x2 block average) or 2.0
/// (bilinear refinement); spacing scales inversely, bounds follow.
pub fn resample_model(model: &Model, factor: f64) -> Result<Model> {
    if factor == 0.5 {
        let m = decimate(&model.m);
        let lo = decimate(&model.m_min);
        let hi = decimate(&model.m_max);
        Model::with_bound_grids(model.h * 2.0, m, lo, hi)
    } else if factor == 2.0 {
        let m = refine(&model.m);
        let lo = refine(&model.m_min);
        let hi = refine(&model.m_max);
        Model::with_bound_grids(model.h * 0.5, m, lo, hi)
    } else {
        Err(MwiError::InvalidConfig(format!(
            "resample factor must be 0.5 or 2.0, got {factor}"
        )))
    }
}

/// 2x2 block average with edge clamping for odd dimensions.
fn decimate(a: &Array2<f64>) -> Array2<f64> {
    let (nz, nx) = a.dim();
    let (mz, mx) = (nz.div_ceil(2), nx.div_ceil(2));
    Array2::from_shape_fn((mz, mx), |(iz, ix)| {
        let z0 = 2 * iz;
        let x0 = 2 * ix;
        let z1 = (z0 + 1).min(nz - 1);
        let x1 = (x0 + 1).min(nx - 1);
        0.25 * (a[(z0, x0)] + a[(z0, x1)] + a[(z1, x0)] + a[(z1, x1)])
    })
}

/// Double each axis: even points copy, odd points average neighbors.
fn refine(a: &Array2<f64>) -> Array2<f64> {
    let (nz, nx) = a.dim();
    Array2::from_shape_fn((2 * nz, 2 * nx), |(iz, ix)| {
        let z0 = iz / 2;
        let x0 = ix / 2;
        let z1 = if iz % 2 == 1 { (z0 + 1).min(nz - 1) } else { z0 };
        let x1 = if ix % 2 == 1 { (x0 + 1).min(nx - 1) } else { x0 };
        0.25 * (a[(z0, x0)] + a[(z0, x1)] + a[(z1, x0)] + a[(z1, x1)])
    })
}
