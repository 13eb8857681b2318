//! Eigenvalues of the separable wire and compound problems.
//!
//! The compound uses three one-dimensional Sturm-Liouville families:
//!
//! * x: `cos(lx x)` on `[0, W/2]`, symmetric at `x = 0`, Robin at `x = W/2`:
//!   `lx tan(lx W/2) = h/k`.
//! * y: `sin(ly y)`, Dirichlet at the chip, Neumann at the wire end:
//!   `ly = (2m+1) pi / (2 L)`.
//! * z: `sin(lz (z + H/2))`, Dirichlet at the die attach, Robin at the top:
//!   `lz cot(lz H) = -h/k`.
//!
//! The wire uses the Dirichlet-Dirichlet family `kw = k pi / L`.
//!
//! Roots of the transcendental equations are bracketed inside their branch
//! of `tan`/`cot` and solved in the pole-free forms `u sin u - b cos u = 0`
//! and `u cos u + c sin u = 0`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{invalid, Error, Result};
use crate::model::{BoundarySet, CompoundSpec, WireSpec};
use crate::numerics::bracketed_root;

const BISECT_TOL: f64 = 1e-8;
const MAX_BRACKET_ITER: usize = 200;

/// Series truncation counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    /// Compound modes along x.
    pub nx: usize,
    /// Compound modes along y (transient and kernel series).
    pub ny: usize,
    /// Compound modes along z (transient and kernel series).
    pub nz: usize,
    /// Wire transient modes.
    pub nk: usize,
    /// Modes across the Dirichlet-transverse direction of the two steady
    /// compound components (z for the chip term, y for the die term).
    pub steady: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            nx: 20,
            ny: 30,
            nz: 20,
            nk: 60,
            steady: 800,
        }
    }
}

impl Truncation {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 || self.nk == 0 || self.steady == 0 {
            return Err(invalid("truncation", "all mode counts must be >= 1"));
        }
        Ok(())
    }
}

/// First `n` positive roots of `l tan(l w / 2) = ratio`.
///
/// The `i`-th root (zero-based) lies in `(2 i pi / w, (2 i + 1) pi / w)`.
pub fn robin_tan_roots(w: f64, ratio: f64, n: usize) -> Result<Vec<f64>> {
    if !(w > 0.0 && ratio > 0.0 && n >= 1) {
        return Err(invalid("robin_tan_roots", "need w > 0, ratio > 0, n >= 1"));
    }
    let b = ratio * w / 2.0;
    let f = |u: f64| u * u.sin() - b * u.cos();
    let df = |u: f64| (1.0 + b) * u.sin() + u * u.cos();
    (0..n)
        .map(|i| {
            let lo = i as f64 * PI;
            let hi = lo + FRAC_PI_2;
            bracketed_root(f, df, lo, hi, BISECT_TOL, MAX_BRACKET_ITER)
                .map(|u| 2.0 * u / w)
                .ok_or(Error::ConvergenceFailure {
                    lo: 2.0 * lo / w,
                    hi: 2.0 * hi / w,
                    iterations: MAX_BRACKET_ITER,
                })
        })
        .collect()
}

/// First `n` positive roots of `l cot(l h) = -ratio`.
///
/// The `p`-th root (one-based) lies in `((2p - 1) pi / (2h), p pi / h)`.
pub fn robin_cot_roots(h: f64, ratio: f64, n: usize) -> Result<Vec<f64>> {
    if !(h > 0.0 && ratio > 0.0 && n >= 1) {
        return Err(invalid("robin_cot_roots", "need h > 0, ratio > 0, n >= 1"));
    }
    let c = ratio * h;
    let f = |u: f64| u * u.cos() + c * u.sin();
    let df = |u: f64| (1.0 + c) * u.cos() - u * u.sin();
    (1..=n)
        .map(|p| {
            let hi = p as f64 * PI;
            let lo = hi - FRAC_PI_2;
            bracketed_root(f, df, lo, hi, BISECT_TOL, MAX_BRACKET_ITER)
                .map(|u| u / h)
                .ok_or(Error::ConvergenceFailure {
                    lo: lo / h,
                    hi: hi / h,
                    iterations: MAX_BRACKET_ITER,
                })
        })
        .collect()
}

/// Relative residual `|l tan(l w/2) - ratio| / ratio`.
pub fn tan_residual(lambda: f64, w: f64, ratio: f64) -> f64 {
    (lambda * (lambda * w / 2.0).tan() - ratio).abs() / ratio
}

/// Relative residual `|l cot(l h) + ratio| / ratio`.
pub fn cot_residual(lambda: f64, h: f64, ratio: f64) -> f64 {
    (lambda / (lambda * h).tan() + ratio).abs() / ratio
}

/// Eigenvalues of all series used by the model, computed once per configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    /// Compound x family, `nx` entries.
    pub lambda_x: Vec<f64>,
    /// Compound y family, `max(ny, steady)` entries.
    pub lambda_y_m: Vec<f64>,
    /// Compound z family, `max(nz, steady)` entries.
    pub lambda_z: Vec<f64>,
    /// Wire family, `nk` entries.
    pub lambda_y_w: Vec<f64>,
    pub truncation: Truncation,
}

/// Squared eigenvalues of the two steady compound components.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedEigen {
    /// `lx_n^2 + lz_p^2`, indexed `[n][p]`.
    pub lambda_y_np: Vec<Vec<f64>>,
    /// `lx_n^2 + ly_m^2`, indexed `[n][m]`.
    pub lambda_z_nm: Vec<Vec<f64>>,
}

impl SpectralBasis {
    pub fn build(
        wire: &WireSpec,
        compound: &CompoundSpec,
        bc: &BoundarySet,
        truncation: Truncation,
    ) -> Result<Self> {
        truncation.validate()?;
        let ratio = bc.robin_ratio(compound);
        let lambda_x = robin_tan_roots(compound.width, ratio, truncation.nx)?;
        let lambda_z = robin_cot_roots(compound.height, ratio, truncation.nz.max(truncation.steady))?;
        let ny = truncation.ny.max(truncation.steady);
        let lambda_y_m = (0..ny)
            .map(|m| (2 * m + 1) as f64 * PI / (2.0 * wire.length))
            .collect();
        let lambda_y_w = (1..=truncation.nk)
            .map(|k| k as f64 * PI / wire.length)
            .collect();
        Ok(Self {
            lambda_x,
            lambda_y_m,
            lambda_z,
            lambda_y_w,
            truncation,
        })
    }

    pub fn combined(&self) -> CombinedEigen {
        let lambda_y_np = self
            .lambda_x
            .iter()
            .map(|lx| self.lambda_z.iter().map(|lz| lx * lx + lz * lz).collect())
            .collect();
        let lambda_z_nm = self
            .lambda_x
            .iter()
            .map(|lx| self.lambda_y_m.iter().map(|ly| lx * lx + ly * ly).collect())
            .collect();
        CombinedEigen {
            lambda_y_np,
            lambda_z_nm,
        }
    }

    /// Transient / kernel y modes.
    pub fn ly(&self) -> &[f64] {
        &self.lambda_y_m[..self.truncation.ny]
    }

    /// Transient / kernel z modes.
    pub fn lz(&self) -> &[f64] {
        &self.lambda_z[..self.truncation.nz]
    }
}
