//! The `ε = 0` limit: explicit differential stages, algebraic stages from
//! `g(X_i, Z_i) = 0`, and the `z` update through `B^I (A^I)^{-1}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{GlmError, Result};
use crate::problems::SingularProblem;
use crate::stepper::{
    combine, newton_solve, ExternalData, ExternalState, NewtonConfig, StageData, StageValues, Stats,
};
use crate::tableau::{
    classify_spectrum, stability_matrix_at_infinity, GlmTableau, ImexGlmPair, SpectrumKind,
};

/// Smallest singular value of `∂g/∂z` accepted at an algebraic solution.
const MIN_SINGULAR_VALUE: f64 = 1e-8;

fn algebraic_cfg() -> NewtonConfig {
    NewtonConfig {
        abs_tol: 1e-12,
        rel_tol: 1e-12,
        max_iters: 50,
        ..NewtonConfig::default()
    }
}

fn check_index_one(problem: &SingularProblem, x: &DVector<f64>, z: &DVector<f64>, stage: usize) -> Result<()> {
    let gz = (problem.g_z)(x, z);
    let sigma = gz.singular_values().min();
    if !(sigma >= MIN_SINGULAR_VALUE) {
        return Err(GlmError::AlgebraicSolve {
            stage,
            reason: format!("dg/dz is near singular (smallest singular value {sigma:.3e})"),
        });
    }
    Ok(())
}

fn algebraic_newton(
    problem: &SingularProblem,
    x: &DVector<f64>,
    guess: DVector<f64>,
    cfg: &NewtonConfig,
    stage: usize,
) -> Result<crate::stepper::NewtonOutcome> {
    newton_solve(
        guess,
        |z| (problem.g)(x, z),
        |z| (problem.g_z)(x, z),
        |z| z.amax(),
        cfg,
        stage,
    )
    .map_err(|e| GlmError::AlgebraicSolve {
        stage,
        reason: e.to_string(),
    })
}

/// Solves `g(x, z) = 0` for `z` to `‖g‖∞ <= 1e-12 (1 + ‖z‖∞)`.
pub fn solve_algebraic(problem: &SingularProblem, x: &DVector<f64>, z_guess: &DVector<f64>) -> Result<DVector<f64>> {
    let o = algebraic_newton(problem, x, z_guess.clone(), &algebraic_cfg(), 0)?;
    check_index_one(problem, x, &o.x, 0)?;
    Ok(o.x)
}

/// Right-hand side of the reduced ODE `x' = f(x, z(x))`.
pub fn reduced_rhs(problem: &SingularProblem, x: &DVector<f64>, z_guess: &DVector<f64>) -> Result<DVector<f64>> {
    let z = solve_algebraic(problem, x, z_guess)?;
    Ok((problem.f)(x, &z))
}

/// Coefficients `(B^I (A^I)^{-1}, M^I(∞))` of the `z` update, exact when the
/// tableau carries rational data.
pub fn dae_update_coefficients(t: &GlmTableau) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m_inf = stability_matrix_at_infinity(t)?;
    let ba = match t.exact.as_ref().and_then(|e| e.b_a_inverse()) {
        Some(m) => crate::tableau::rational_to_dmatrix(&m, t.s),
        None => {
            let at = t.a.transpose();
            let x = at
                .lu()
                .solve(&t.b.transpose())
                .ok_or(GlmError::SingularCoefficients { modulus: 0.0 })?;
            x.transpose()
        }
    };
    Ok((ba, m_inf))
}

pub(crate) fn dae_stages(
    pair: &ImexGlmPair,
    p: &SingularProblem,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<StageValues> {
    let (mx, mz) = (p.mx(), p.mz());
    for (m, ext, name) in [(mx, x, "x"), (mz, z, "z")] {
        if ext.nrows() != m || ext.ncols() != pair.r() {
            return Err(GlmError::Dimension {
                field: name.into(),
                expected: format!("{m}x{}", pair.r()),
                found: format!("{}x{}", ext.nrows(), ext.ncols()),
            });
        }
    }
    let s = pair.s();
    let ae = &pair.explicit.a;
    let xi_known = combine(x, &pair.explicit.u);
    let zeta = combine(z, &pair.implicit.u);
    let mut xs = DMatrix::zeros(mx, s);
    let mut zs = DMatrix::zeros(mz, s);
    let mut kx = DMatrix::zeros(mx, s);
    let mut stats = Stats::default();
    for i in 0..s {
        let mut xi = xi_known.column(i).into_owned();
        for j in 0..i {
            if ae[(i, j)] != 0.0 {
                xi.axpy(ae[(i, j)], &kx.column(j), 1.0);
            }
        }
        let guess = if i == 0 {
            zeta.column(0).into_owned()
        } else {
            zs.column(i - 1).into_owned()
        };
        let o = algebraic_newton(p, &xi, guess, cfg, i)?;
        check_index_one(p, &xi, &o.x, i)?;
        stats.record(&o);
        kx.set_column(i, &((p.f)(&xi, &o.x) * h));
        xs.set_column(i, &xi);
        zs.set_column(i, &o.x);
    }
    // K^I = (A^I)^{-1} (Z - U z), column-wise; reported for diagnostics only.
    let kz = pair
        .implicit
        .a
        .clone()
        .lu()
        .solve(&(&zs - &zeta).transpose())
        .map(|k| k.transpose())
        .unwrap_or_else(|| DMatrix::from_element(mz, s, f64::NAN));
    Ok(stats.finish(StageData::Component { x: xs, z: zs }, (kx, kz)))
}

/// One step of the `ε = 0` scheme.
pub fn step_dae(
    pair: &ImexGlmPair,
    problem: &SingularProblem,
    state: &ExternalState,
    cfg: &NewtonConfig,
) -> Result<(ExternalState, StageValues)> {
    cfg.validate()?;
    if problem.eps != 0.0 {
        return Err(GlmError::Incompatible(format!(
            "the DAE scheme needs eps = 0, problem `{}` has eps = {}",
            problem.name, problem.eps
        )));
    }
    let (x, z) = state.xz()?;
    let (ba, m_inf) = dae_update_coefficients(&pair.implicit)?;
    let stages = dae_stages(pair, problem, x, z, state.h, cfg)?;
    let StageData::Component { z: zs, .. } = &stages.data else {
        unreachable!("dae stages are component stages")
    };
    let mut x_new = combine(x, &pair.explicit.v);
    x_new += combine(&stages.increments.0, &pair.explicit.b);
    let mut z_new = combine(zs, &ba);
    z_new += combine(z, &m_inf);
    Ok((state.advanced(ExternalData::Component { x: x_new, z: z_new }), stages))
}

pub fn dae_step(
    pair: &ImexGlmPair,
    problem: &SingularProblem,
    state: &ExternalState,
    cfg: &NewtonConfig,
) -> Result<ExternalState> {
    step_dae(pair, problem, state, cfg).map(|(s, _)| s)
}

/// Expected order of the `z` error in the `ε = 0` limit.
///
/// `min(p, q + 1)` when every unimodular eigenvalue of `M^I(∞)` is of the form
/// `e^{±iπ/L}` (or none exists); `min(p, q)` when another unimodular
/// eigenvalue such as `1` is present.
pub fn stiff_order(pair: &ImexGlmPair) -> Result<usize> {
    let m_inf = stability_matrix_at_infinity(&pair.implicit)?;
    let eigs: Vec<_> = m_inf.complex_eigenvalues().iter().copied().collect();
    let p = pair.p();
    let q = pair.implicit.q;
    match classify_spectrum(&eigs, 1e-9) {
        SpectrumKind::Inside | SpectrumKind::HalfTurn => Ok(p.min(q + 1)),
        SpectrumKind::Generic => Ok(p.min(q)),
        SpectrumKind::Outside => Err(GlmError::SpectralRadius(
            eigs.iter().map(|e| e.norm()).fold(0.0, f64::max),
        )),
    }
}
