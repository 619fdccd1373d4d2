//! `ζ^[n] = M ζ^[n-1] + δ^[n]` with perturbations of size `h^ν`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fit::observed_order;
use super::fmt_float;
use crate::error::{GlmError, Result};
use crate::tableau::{classify_spectrum, SpectrumKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    /// `δ^[k] = h^ν v`.
    Constant,
    /// `δ^[k] = h^ν φ(k h) v` with `φ(t) = 2 + cos t`.
    Smooth,
    /// `δ^[k] = ± h^ν v` with independent random signs.
    Rough,
}

impl Noise {
    pub fn as_str(self) -> &'static str {
        match self {
            Noise::Constant => "constant",
            Noise::Smooth => "smooth",
            Noise::Rough => "rough",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecurrenceSpec {
    pub m: DMatrix<f64>,
    pub nu: f64,
    pub noise: Noise,
    pub t_final: f64,
    /// Step sizes; `n = T/h` steps each.
    pub hs: Vec<f64>,
    /// Seed of the sign sequence for [`Noise::Rough`].
    pub seed: u64,
}

impl RecurrenceSpec {
    /// `h = 2^-4 .. 2^-10`, `T = 1`.
    pub fn new(m: DMatrix<f64>, nu: f64, noise: Noise) -> Self {
        RecurrenceSpec {
            m,
            nu,
            noise,
            t_final: 1.0,
            hs: (4..=10).map(|k| 2f64.powi(-k)).collect(),
            seed: 0x5eed,
        }
    }
}

/// Accumulation regime, named after the dominant spectral part of `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecurrenceCase {
    /// Unimodular eigenvalues `e^{±iπ/L}` with non-smooth perturbations.
    AGeneral,
    /// Unimodular eigenvalues `e^{±iπ/L}` with perturbations whose
    /// differences are one order smaller.
    ASmooth,
    /// Other unimodular eigenvalues (e.g. `1`).
    B,
    /// Spectrum strictly inside the unit disc.
    C,
}

impl RecurrenceCase {
    pub fn label(self) -> &'static str {
        match self {
            RecurrenceCase::AGeneral => "a-general",
            RecurrenceCase::ASmooth => "a-smooth",
            RecurrenceCase::B => "b",
            RecurrenceCase::C => "c",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecurrenceReport {
    pub case: RecurrenceCase,
    /// Predicted exponent of `max_n ‖ζ^[n]‖` in `h`.
    pub predicted: f64,
    pub exponent: f64,
    /// `(h, max_n ‖ζ^[n]‖∞)` per rung.
    pub norms: Vec<(f64, f64)>,
    /// `|exponent - predicted| <= 0.2`; in case (a-general) the prediction is
    /// an upper bound on the growth, so only `exponent >= predicted - 0.2`.
    pub pass: bool,
}

const EXPONENT_TOL: f64 = 0.2;

fn classify(m: &DMatrix<f64>, noise: Noise, nu: f64) -> Result<(RecurrenceCase, f64)> {
    let eigs: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    let rho = eigs.iter().map(|e| e.norm()).fold(0.0, f64::max);
    Ok(match classify_spectrum(&eigs, 1e-9) {
        SpectrumKind::Outside => return Err(GlmError::SpectralRadius(rho)),
        SpectrumKind::Generic => (RecurrenceCase::B, nu - 1.0),
        SpectrumKind::HalfTurn if noise == Noise::Rough => (RecurrenceCase::AGeneral, nu - 1.0),
        SpectrumKind::HalfTurn => (RecurrenceCase::ASmooth, nu),
        SpectrumKind::Inside => (RecurrenceCase::C, nu),
    })
}

/// Iterates the recurrence on every rung and fits the exponent of
/// `max_n ‖ζ^[n]‖∞` against `h`.
pub fn simulate_error_recurrence(spec: &RecurrenceSpec) -> Result<RecurrenceReport> {
    let d = spec.m.nrows();
    if d == 0 || spec.m.ncols() != d {
        return Err(GlmError::param("matrix", "must be square and non-empty"));
    }
    if spec.m.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::NonFinite { field: "matrix".into() });
    }
    if !(spec.nu >= 1.0) {
        return Err(GlmError::param("nu", "must be at least 1"));
    }
    if !(spec.t_final > 0.0) {
        return Err(GlmError::param("t_final", "must be positive"));
    }
    if spec.hs.len() < 3 {
        return Err(GlmError::TooFewRungs(spec.hs.len()));
    }
    let (case, predicted) = classify(&spec.m, spec.noise, spec.nu)?;
    // A fixed direction with no zero component.
    let v = DVector::from_fn(d, |i, _| 1.0 / (1.0 + i as f64));
    let mut norms = Vec::with_capacity(spec.hs.len());
    for &h in &spec.hs {
        let n = crate::stepper::step_count(0.0, spec.t_final, h)?;
        let scale = h.powf(spec.nu);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut delta = |k: usize| -> f64 {
            match spec.noise {
                Noise::Constant => scale,
                Noise::Smooth => scale * (2.0 + (k as f64 * h).cos()),
                Noise::Rough => {
                    if rng.gen::<bool>() {
                        scale
                    } else {
                        -scale
                    }
                }
            }
        };
        let mut zeta = &v * delta(0);
        let mut max = zeta.amax();
        for k in 1..=n {
            zeta = &spec.m * zeta + &v * delta(k);
            max = max.max(zeta.amax());
        }
        norms.push((h, max));
    }
    let (hs, errs): (Vec<f64>, Vec<f64>) = norms.iter().copied().unzip();
    let exponent = observed_order(&errs, &hs)?;
    let pass = match case {
        RecurrenceCase::AGeneral => exponent >= predicted - EXPONENT_TOL,
        _ => (exponent - predicted).abs() <= EXPONENT_TOL,
    };
    Ok(RecurrenceReport {
        case,
        predicted,
        exponent,
        norms,
        pass,
    })
}

impl RecurrenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,max_norm\n");
        for (h, e) in &self.norms {
            out.push_str(&format!("{},{}\n", fmt_float(*h), fmt_float(*e)));
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "exponent ≈ {}, case ({}); predicted {}, fitted {:.3}, {}",
            self.exponent.round(),
            self.case.label(),
            self.predicted,
            self.exponent,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::dmatrix;

    use super::*;

    fn run(m: DMatrix<f64>, nu: f64, noise: Noise) -> RecurrenceReport {
        simulate_error_recurrence(&RecurrenceSpec::new(m, nu, noise)).unwrap()
    }

    #[test]
    fn contractive_scalar_keeps_the_noise_order() {
        for noise in [Noise::Constant, Noise::Smooth, Noise::Rough] {
            let r = run(dmatrix![0.5], 2.0, noise);
            assert_eq!(r.case, RecurrenceCase::C);
            assert!((r.exponent - 2.0).abs() <= 0.2, "{noise:?}: {}", r.exponent);
            assert!(r.pass);
        }
    }

    #[test]
    fn alternating_scalar_with_smooth_noise() {
        let r = run(dmatrix![-1.0], 2.0, Noise::Smooth);
        assert_eq!(r.case, RecurrenceCase::ASmooth);
        assert!((r.exponent - 2.0).abs() <= 0.2, "{}", r.exponent);
        assert!(r.summary_line().starts_with("exponent ≈ 2, case (a-smooth)"));
    }

    #[test]
    fn identity_with_constant_noise_loses_one_order() {
        let r = run(dmatrix![1.0], 2.0, Noise::Constant);
        assert_eq!(r.case, RecurrenceCase::B);
        assert!((r.exponent - 1.0).abs() <= 0.05, "{}", r.exponent);
    }

    #[test]
    fn alternating_scalar_with_rough_noise_is_bounded_by_case_a() {
        let r = run(dmatrix![-1.0], 2.0, Noise::Rough);
        assert_eq!(r.case, RecurrenceCase::AGeneral);
        assert!(r.exponent >= 1.0 - 0.2, "{}", r.exponent);
        assert!(r.pass);
    }

    #[test]
    fn three_dimensional_mixed_spectra() {
        let block = |last: f64| dmatrix![0.5, 1.0, 0.0; 0.0, 0.5, 0.0; 0.0, 0.0, last];
        let s = dmatrix![1.0, 2.0, 0.0; 0.0, 1.0, 1.0; 1.0, 0.0, 1.0];
        let s_inv = s.clone().try_inverse().unwrap();
        let similar = |m: DMatrix<f64>| &s * m * &s_inv;

        let r = run(similar(block(-1.0)), 2.0, Noise::Smooth);
        assert_eq!(r.case, RecurrenceCase::ASmooth);
        assert!((r.exponent - 2.0).abs() <= 0.2, "{}", r.exponent);

        let r = run(similar(block(1.0)), 2.0, Noise::Constant);
        assert_eq!(r.case, RecurrenceCase::B);
        assert!((r.exponent - 1.0).abs() <= 0.2, "{}", r.exponent);

        let r = run(similar(block(0.9)), 2.0, Noise::Rough);
        assert_eq!(r.case, RecurrenceCase::C);
        assert!((r.exponent - 2.0).abs() <= 0.2, "{}", r.exponent);
    }

    #[test]
    fn expanding_matrix_is_rejected() {
        let e = simulate_error_recurrence(&RecurrenceSpec::new(dmatrix![1.01], 2.0, Noise::Constant)).unwrap_err();
        assert!(matches!(e, GlmError::SpectralRadius(_)));
    }

    #[test]
    fn invalid_specs() {
        assert!(simulate_error_recurrence(&RecurrenceSpec::new(dmatrix![0.5], 0.5, Noise::Constant)).is_err());
        assert!(simulate_error_recurrence(&RecurrenceSpec::new(DMatrix::zeros(2, 3), 2.0, Noise::Constant)).is_err());
    }

    #[test]
    fn rough_noise_is_reproducible() {
        let a = run(dmatrix![-1.0], 2.0, Noise::Rough);
        let b = run(dmatrix![-1.0], 2.0, Noise::Rough);
        assert_eq!(a.norms, b.norms);
    }
}
