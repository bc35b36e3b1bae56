//! Banded complex LU factorization with partial pivoting.
//!
//! Storage follows the LAPACK band layout: a matrix with `kl` subdiagonals
//! and `ku` superdiagonals lives in a `(2*kl + ku + 1) x n` column-major
//! array with `kl` spare rows on top for pivoting fill, so entry `(i, j)`
//! sits at `ab[j*ldab + kl + ku + i - j]`. Row interchanges never move a
//! pivot further than `kl` rows, which keeps all fill inside the band.

use num_complex::Complex64;

/// Banded matrix under assembly; entries default to zero.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    ldab: usize,
    ab: Vec<Complex64>,
    max_abs: f64,
}

impl BandedMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandedMatrix { n, kl, ku, ldab, ab: vec![Complex64::ZERO; ldab * n], max_abs: 0.0 }
    }

    /// Set entry `(i, j)`; panics if the entry lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        debug_assert!(i < self.n && j < self.n);
        let (i, j) = (i as isize, j as isize);
        let d = i - j;
        assert!(
            d <= self.kl as isize && -d <= self.ku as isize,
            "entry ({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let r = (self.kl + self.ku) as isize + d;
        self.ab[j as usize * self.ldab + r as usize] = v;
        let a = v.norm();
        if a > self.max_abs {
            self.max_abs = a;
        }
    }

    /// Largest entry modulus seen during assembly.
    pub fn max_abs(&self) -> f64 {
        self.max_abs
    }
}

/// Pivot fell below the singularity threshold during elimination.
#[derive(Debug, Clone, Copy)]
pub struct PivotFailure {
    pub column: usize,
    pub pivot: f64,
    pub threshold: f64,
}

/// LU factors of a banded matrix, reusable for many right-hand sides.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<Complex64>,
    ipiv: Vec<usize>,
}

/// Relative pivot threshold for declaring the matrix singular.
const PIVOT_RTOL: f64 = 1e-14;

impl BandedLu {
    /// Factor the matrix in place. Pivoting is confined to the band by
    /// construction (row `j` only ever swaps with rows `j..=j+kl`).
    pub fn factor(mut m: BandedMatrix) -> Result<Self, PivotFailure> {
        let (n, kl, ku, ldab) = (m.n, m.kl, m.ku, m.ldab);
        let width = kl + ku; // fill-extended superdiagonal count
        let diag = kl + ku; // row offset of the diagonal inside a column
        let threshold = PIVOT_RTOL * m.max_abs;
        let mut ipiv = vec![0usize; n];

        for j in 0..n {
            let rows_below = kl.min(n - 1 - j);
            // Partial pivot: largest modulus in rows j..=j+kl of column j.
            let (mut p, mut best) = (0usize, 0.0f64);
            for r in 0..=rows_below {
                let a = m.ab[j * ldab + diag + r].norm();
                if a > best {
                    best = a;
                    p = r;
                }
            }
            if !(best > threshold) || !best.is_finite() {
                return Err(PivotFailure { column: j, pivot: best, threshold });
            }
            ipiv[j] = j + p;
            if p != 0 {
                // Swap rows j and j+p across columns j..=j+width.
                let cols = width.min(n - 1 - j);
                for c in j..=j + cols {
                    let off = j * ldab + diag; // row j in column j
                    let _ = off;
                    let rj = c * ldab + (diag as isize + j as isize - c as isize) as usize;
                    let rp = rj + p;
                    m.ab.swap(rj, rp);
                }
            }

            if rows_below == 0 {
                continue;
            }
            let cols = width.min(n - 1 - j);
            let (head, tail) = m.ab.split_at_mut((j + 1) * ldab);
            let col_j = &mut head[j * ldab..];
            let pivot = col_j[diag];
            let inv = pivot.inv();
            for r in 1..=rows_below {
                col_j[diag + r] *= inv;
            }
            let mult = &col_j[diag + 1..diag + 1 + rows_below];
            for c in j + 1..=j + cols {
                let base = (c - j - 1) * ldab;
                let top = (diag as isize + j as isize - c as isize) as usize;
                let col_c = &mut tail[base + top..base + top + 1 + rows_below];
                let ajc = col_c[0];
                if ajc != Complex64::ZERO {
                    let (_, below) = col_c.split_at_mut(1);
                    for (b, &mu) in below.iter_mut().zip(mult) {
                        *b -= mu * ajc;
                    }
                }
            }
        }
        Ok(BandedLu { n, kl, ku, ldab, ab: m.ab, ipiv })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Bandwidth record (kl, ku) of the factored operator.
    pub fn bandwidth(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        assert_eq!(b.len(), self.n, "rhs length must match the matrix order");
        let (n, kl, ku, ldab) = (self.n, self.kl, self.ku, self.ldab);
        let diag = kl + ku;
        // L: unit lower triangular with interchanges.
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let rows = kl.min(n - 1 - j);
            if rows == 0 {
                continue;
            }
            let bj = b[j];
            if bj != Complex64::ZERO {
                let col = &self.ab[j * ldab + diag + 1..j * ldab + diag + 1 + rows];
                for (bv, &l) in b[j + 1..j + 1 + rows].iter_mut().zip(col) {
                    *bv -= l * bj;
                }
            }
        }
        // U: back substitution over the fill-extended upper band.
        for j in (0..n).rev() {
            let x = b[j] / self.ab[j * ldab + diag];
            b[j] = x;
            if x != Complex64::ZERO {
                let above = (kl + ku).min(j);
                let col = &self.ab[j * ldab + diag - above..j * ldab + diag];
                for (bv, &u) in b[j - above..j].iter_mut().zip(col) {
                    *bv -= u * x;
                }
            }
        }
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
