use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use super::GlmTableau;
use crate::error::{GlmError, Result};

/// Relative pivot size below which a resolvent or `A` counts as singular.
const SINGULAR_PIVOT: f64 = 1e-13;

fn min_rel_pivot_c(m: &DMatrix<Complex64>, diag: impl Iterator<Item = Complex64>) -> f64 {
    let scale = m.iter().fold(0.0_f64, |s, x| s.max(x.norm())).max(f64::MIN_POSITIVE);
    diag.fold(f64::INFINITY, |p, d| p.min(d.norm())) / scale
}

/// `M(z) = V + z B (I - z A)^{-1} U`.
pub fn stability_matrix(t: &GlmTableau, z: Complex64) -> Result<DMatrix<Complex64>> {
    let to_c = |m: &DMatrix<f64>| m.map(|x| Complex64::new(x, 0.0));
    let v = to_c(&t.v);
    if z == Complex64::new(0.0, 0.0) {
        return Ok(v);
    }
    let resolvent = DMatrix::<Complex64>::identity(t.s, t.s) - to_c(&t.a) * z;
    let lu = resolvent.clone().lu();
    let pivots = lu.u().diagonal();
    if min_rel_pivot_c(&resolvent, pivots.iter().copied()) <= SINGULAR_PIVOT {
        return Err(GlmError::SingularResolvent { re: z.re, im: z.im });
    }
    let x = lu
        .solve(&to_c(&t.u))
        .ok_or(GlmError::SingularResolvent { re: z.re, im: z.im })?;
    Ok(v + to_c(&t.b) * x * z)
}

/// `M(∞) = V - B A^{-1} U`.
pub fn stability_matrix_at_infinity(t: &GlmTableau) -> Result<DMatrix<f64>> {
    if let Some(exact) = &t.exact {
        return match exact.stability_at_infinity() {
            Some(m) => Ok(super::rational::to_dmatrix(&m, t.r)),
            None => Err(singular_a(&t.a)),
        };
    }
    let lu = t.a.clone().lu();
    let scale = t.a.amax().max(f64::MIN_POSITIVE);
    let pmin = lu.u().diagonal().iter().fold(f64::INFINITY, |p, d| p.min(d.abs()));
    if pmin / scale <= SINGULAR_PIVOT {
        return Err(singular_a(&t.a));
    }
    let x = lu.solve(&t.u).ok_or_else(|| singular_a(&t.a))?;
    Ok(&t.v - &t.b * x)
}

fn singular_a(a: &DMatrix<f64>) -> GlmError {
    let modulus = a
        .complex_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |m, e| m.min(e.norm()));
    GlmError::SingularCoefficients { modulus }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|x| !x.is_finite()) {
        return f64::NAN;
    }
    m.complex_eigenvalues().iter().fold(0.0_f64, |r, e| r.max(e.norm()))
}

pub fn spectral_radius_complex(m: &DMatrix<Complex64>) -> f64 {
    if m.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return f64::NAN;
    }
    match m.nrows() {
        0 => 0.0,
        1 => m[(0, 0)].norm(),
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let disc = (tr * tr - det * 4.0).sqrt();
            ((tr + disc) * 0.5).norm().max(((tr - disc) * 0.5).norm())
        }
        _ => Schur::try_new(m.clone(), 1e-15, 10_000)
            .and_then(|s| s.eigenvalues())
            .map(|e| e.iter().fold(0.0_f64, |r, x| r.max(x.norm())))
            .unwrap_or(f64::NAN),
    }
}

/// Where the spectrum of a matrix sits relative to the unit circle; the
/// variants are ordered from most to least benign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SpectrumKind {
    /// All eigenvalues strictly inside the unit circle.
    Inside,
    /// Every unimodular eigenvalue is `e^{±iπ/L}` for a positive integer `L`.
    HalfTurn,
    /// Some unimodular eigenvalue is not of the `e^{±iπ/L}` form (e.g. `1`).
    Generic,
    /// Some eigenvalue outside the unit circle.
    Outside,
}

/// Classifies eigenvalues with modulus tolerance `tol`.
pub fn classify_spectrum(eigs: &[Complex64], tol: f64) -> SpectrumKind {
    let mut kind = SpectrumKind::Inside;
    for e in eigs {
        let r = e.norm();
        let k = if r > 1.0 + tol {
            SpectrumKind::Outside
        } else if r < 1.0 - tol {
            SpectrumKind::Inside
        } else {
            let arg = e.im.atan2(e.re).abs();
            let l = std::f64::consts::PI / arg;
            if arg > 0.0 && (l - l.round()).abs() <= 1e-6 * l {
                SpectrumKind::HalfTurn
            } else {
                SpectrumKind::Generic
            }
        };
        kind = kind.max(k);
    }
    kind
}
