//! Frequency-domain acoustic wave operator with absorbing layers.
//!
//! The operator discretizes `A(m, w) u = -w^2 m.u - Lap_pml u` on a grid
//! padded with `pml_cells` absorbing cells on all four sides. Inside the
//! layers the derivatives are complex-stretched with `s(x) = 1 + i sigma/w`
//! and a quadratic `sigma` profile; each row is scaled by `s_x s_z` so the
//! assembled matrix stays complex symmetric (`A^T = A`, no conjugation).
//! Rows of interior nodes are untouched (`s = 1` there), so solutions and
//! right-hand sides keep their physical meaning at sources and receivers.

pub mod banded;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{MwiError, Result};
use crate::model::Model;
use banded::{BandedLu, BandedMatrix};

/// Knobs for the discretization; defaults follow the experiments.
#[derive(Debug, Clone, Copy)]
pub struct ModelingOptions {
    /// Absorbing layer width in cells on each side.
    pub pml_cells: usize,
    /// Theoretical normal-incidence reflection of the layer; 1.0 disables
    /// stretching entirely (useful for operator identities).
    pub pml_reflection: f64,
}

impl Default for ModelingOptions {
    fn default() -> Self {
        ModelingOptions { pml_cells: 12, pml_reflection: 1e-3 }
    }
}

/// Geometry of the padded computational grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaddedGrid {
    /// Interior (physical) point counts.
    pub nx: usize,
    pub nz: usize,
    /// Pad width in cells on each side.
    pub pml: usize,
    pub h: f64,
}

impl PaddedGrid {
    pub fn padded_nx(&self) -> usize {
        self.nx + 2 * self.pml
    }
    pub fn padded_nz(&self) -> usize {
        self.nz + 2 * self.pml
    }
    pub fn n(&self) -> usize {
        self.padded_nx() * self.padded_nz()
    }
    /// Padded indices of an interior node.
    pub fn pad_index(&self, ix: usize, iz: usize) -> (usize, usize) {
        (ix + self.pml, iz + self.pml)
    }
}

/// Complex wavefield on the padded grid for one (source, frequency).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: PaddedGrid,
    /// Values, shape `(padded_nz, padded_nx)`.
    pub values: Array2<Complex64>,
}

impl Field {
    pub fn zeros(grid: PaddedGrid) -> Self {
        Field { grid, values: Array2::from_elem((grid.padded_nz(), grid.padded_nx()), Complex64::ZERO) }
    }

    /// Value at an interior node.
    pub fn at_interior(&self, ix: usize, iz: usize) -> Complex64 {
        let (px, pz) = self.grid.pad_index(ix, iz);
        self.values[(pz, px)]
    }
}

/// Assembled 5-point operator for one frequency.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub grid: PaddedGrid,
    /// Angular frequency in rad/s.
    pub omega: f64,
    c0: Array2<Complex64>,
    ce: Array2<Complex64>,
    cw: Array2<Complex64>,
    cs: Array2<Complex64>,
    cn: Array2<Complex64>,
    /// Row scaling `s_x(i) s_z(j)`; multiplies the mass term and therefore
    /// `dA/dm` wherever sensitivities are needed.
    mass_scale: Array2<Complex64>,
}

/// Stretch factors `s = 1 + i sigma/w` at nodes and half-nodes along one axis.
fn stretches(
    padded: usize,
    pml: usize,
    interior_last: usize,
    sigma_max: f64,
    omega: f64,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let sigma = |pos: f64| -> f64 {
        let d = if pos < pml as f64 {
            pml as f64 - pos
        } else if pos > interior_last as f64 {
            pos - interior_last as f64
        } else {
            0.0
        };
        if d > 0.0 {
            let t = d / pml as f64;
            sigma_max * t * t
        } else {
            0.0
        }
    };
    let s = |pos: f64| Complex64::new(1.0, sigma(pos) / omega);
    let nodes = (0..padded).map(|i| s(i as f64)).collect();
    let halves = (0..padded - 1).map(|i| s(i as f64 + 0.5)).collect();
    (nodes, halves)
}

/// Discretize `A(m, w)` on the padded grid; model values are edge-extended
/// into the pad. `pml_cells >= 8` is required for a useful layer.
pub fn assemble(model: &Model, omega: f64, opts: &ModelingOptions) -> Result<DiscreteOperator> {
    if opts.pml_cells < 8 {
        return Err(MwiError::InvalidConfig(format!(
            "pml width must be at least 8 cells, got {}",
            opts.pml_cells
        )));
    }
    if !omega.is_finite() || !(omega > 0.0) {
        return Err(MwiError::InvalidConfig(format!("omega must be positive, got {omega}")));
    }
    let grid = PaddedGrid { nx: model.nx, nz: model.nz, pml: opts.pml_cells, h: model.h };
    let (pnz, pnx) = (grid.padded_nz(), grid.padded_nx());
    let pml = opts.pml_cells;

    // sigma_max for a quadratic profile hitting the target reflection.
    // The reference velocity comes from the model bounds, not the model
    // itself, so the operator stays differentiable in m and one layer
    // profile serves a whole inversion run.
    let layer_m = pml as f64 * model.h;
    let m_lo = model.m_min.iter().cloned().fold(f64::MAX, f64::min);
    let v_ref = 1.0 / m_lo.sqrt();
    let sigma_max = if opts.pml_reflection >= 1.0 {
        0.0
    } else {
        1.5 * v_ref * (1.0 / opts.pml_reflection).ln() / layer_m
    };

    let (sx, sxh) = stretches(pnx, pml, pml + model.nx - 1, sigma_max, omega);
    let (sz, szh) = stretches(pnz, pml, pml + model.nz - 1, sigma_max, omega);

    let m_ext = Array2::from_shape_fn((pnz, pnx), |(jz, jx)| {
        let iz = jz.saturating_sub(pml).min(model.nz - 1);
        let ix = jx.saturating_sub(pml).min(model.nx - 1);
        model.m[(iz, ix)]
    });

    let inv_h2 = 1.0 / (model.h * model.h);
    let w2 = omega * omega;
    let zero = Complex64::ZERO;
    let mut c0 = Array2::from_elem((pnz, pnx), zero);
    let mut ce = c0.clone();
    let mut cw = c0.clone();
    let mut cs = c0.clone();
    let mut cn = c0.clone();
    let mut mass_scale = c0.clone();

    for jz in 0..pnz {
        for jx in 0..pnx {
            let e = if jx + 1 < pnx { -sz[jz] / sxh[jx] * inv_h2 } else { zero };
            let w = if jx > 0 { -sz[jz] / sxh[jx - 1] * inv_h2 } else { zero };
            let s = if jz + 1 < pnz { -sx[jx] / szh[jz] * inv_h2 } else { zero };
            let n = if jz > 0 { -sx[jx] / szh[jz - 1] * inv_h2 } else { zero };
            let scale = sx[jx] * sz[jz];
            ce[(jz, jx)] = e;
            cw[(jz, jx)] = w;
            cs[(jz, jx)] = s;
            cn[(jz, jx)] = n;
            mass_scale[(jz, jx)] = scale;
            c0[(jz, jx)] = -w2 * m_ext[(jz, jx)] * scale - (e + w + s + n);
        }
    }
    Ok(DiscreteOperator { grid, omega, c0, ce, cw, cs, cn, mass_scale })
}

impl DiscreteOperator {
    /// Apply the operator to a field (stencil matvec).
    pub fn apply(&self, u: &Field) -> Field {
        assert_eq!(u.grid, self.grid, "field grid must match the operator");
        let (pnz, pnx) = (self.grid.padded_nz(), self.grid.padded_nx());
        let mut out = Field::zeros(self.grid);
        for jz in 0..pnz {
            for jx in 0..pnx {
                let mut acc = self.c0[(jz, jx)] * u.values[(jz, jx)];
                if jx + 1 < pnx {
                    acc += self.ce[(jz, jx)] * u.values[(jz, jx + 1)];
                }
                if jx > 0 {
                    acc += self.cw[(jz, jx)] * u.values[(jz, jx - 1)];
                }
                if jz + 1 < pnz {
                    acc += self.cs[(jz, jx)] * u.values[(jz + 1, jx)];
                }
                if jz > 0 {
                    acc += self.cn[(jz, jx)] * u.values[(jz - 1, jx)];
                }
                out.values[(jz, jx)] = acc;
            }
        }
        out
    }

    /// Row scaling of the mass term at a padded node.
    pub fn mass_scale_at(&self, jz: usize, jx: usize) -> Complex64 {
        self.mass_scale[(jz, jx)]
    }
}

/// Node ordering of the linear system: the shorter padded axis runs fastest
/// so the band stays as thin as possible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ordering {
    XFast,
    ZFast,
}

/// Banded LU factors of an assembled operator.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub grid: PaddedGrid,
    pub omega: f64,
    ordering: Ordering,
    lu: BandedLu,
}

/// Factor the operator; one factorization serves any number of sources.
pub fn factorize(op: &DiscreteOperator) -> Result<Factorization> {
    let (pnz, pnx) = (op.grid.padded_nz(), op.grid.padded_nx());
    let (ordering, bw) =
        if pnx <= pnz { (Ordering::XFast, pnx) } else { (Ordering::ZFast, pnz) };
    let n = op.grid.n();
    let index = |jz: usize, jx: usize| -> usize {
        match ordering {
            Ordering::XFast => jz * pnx + jx,
            Ordering::ZFast => jx * pnz + jz,
        }
    };
    let mut mat = BandedMatrix::new(n, bw, bw);
    for jz in 0..pnz {
        for jx in 0..pnx {
            let row = index(jz, jx);
            mat.set(row, row, op.c0[(jz, jx)]);
            if jx + 1 < pnx {
                mat.set(row, index(jz, jx + 1), op.ce[(jz, jx)]);
            }
            if jx > 0 {
                mat.set(row, index(jz, jx - 1), op.cw[(jz, jx)]);
            }
            if jz + 1 < pnz {
                mat.set(row, index(jz + 1, jx), op.cs[(jz, jx)]);
            }
            if jz > 0 {
                mat.set(row, index(jz - 1, jx), op.cn[(jz, jx)]);
            }
        }
    }
    let lu = BandedLu::factor(mat).map_err(|p| MwiError::SingularOperator {
        omega_hz: op.omega / (2.0 * std::f64::consts::PI),
        pivot: p.pivot,
        threshold: p.threshold,
        nx: op.grid.nx,
        nz: op.grid.nz,
    })?;
    Ok(Factorization { grid: op.grid, omega: op.omega, ordering, lu })
}

impl Factorization {
    fn to_vec(&self, f: &Field) -> Vec<Complex64> {
        let (pnz, pnx) = (self.grid.padded_nz(), self.grid.padded_nx());
        let mut v = vec![Complex64::ZERO; self.grid.n()];
        for jz in 0..pnz {
            for jx in 0..pnx {
                let idx = match self.ordering {
                    Ordering::XFast => jz * pnx + jx,
                    Ordering::ZFast => jx * pnz + jz,
                };
                v[idx] = f.values[(jz, jx)];
            }
        }
        v
    }

    fn to_field(&self, v: &[Complex64]) -> Field {
        let (pnz, pnx) = (self.grid.padded_nz(), self.grid.padded_nx());
        let mut f = Field::zeros(self.grid);
        for jz in 0..pnz {
            for jx in 0..pnx {
                let idx = match self.ordering {
                    Ordering::XFast => jz * pnx + jx,
                    Ordering::ZFast => jx * pnz + jz,
                };
                f.values[(jz, jx)] = v[idx];
            }
        }
        f
    }

    /// Bandwidth record of the underlying factors.
    pub fn bandwidth(&self) -> usize {
        self.lu.bandwidth().0
    }
}

/// Solve `A u = source`.
pub fn solve_forward(fac: &Factorization, source: &Field) -> Result<Field> {
    if source.grid != fac.grid {
        return Err(MwiError::ShapeMismatch("source grid differs from the factored grid".into()));
    }
    let mut v = fac.to_vec(source);
    fac.lu.solve_in_place(&mut v);
    Ok(fac.to_field(&v))
}

/// Solve `A^H v = source`. The operator is complex symmetric, so the
/// conjugate-transpose solve is a forward solve wrapped in conjugations.
pub fn solve_adjoint(fac: &Factorization, source: &Field) -> Result<Field> {
    if source.grid != fac.grid {
        return Err(MwiError::ShapeMismatch("source grid differs from the factored grid".into()));
    }
    let mut v = fac.to_vec(source);
    for x in v.iter_mut() {
        *x = x.conj();
    }
    fac.lu.solve_in_place(&mut v);
    for x in v.iter_mut() {
        *x = x.conj();
    }
    Ok(fac.to_field(&v))
}
