//! Initial external stages from Nordsieck-type derivative data.
//!
//! `𝕪_j^[0] = Σ_k w_jk h^k y^{(k)}(t0)`; for additive pairs the `k >= 1`
//! terms are split as `w^E_jk h^k (f^E)^{(k-1)} + w^I_jk h^k (f^I)^{(k-1)}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{GlmError, Result};
use crate::problems::{AdditiveProblem, PartitionedProblem, ProblemMode, SingularProblem};
use crate::stepper::ExternalState;
use crate::tableau::{ImexGlmPair, SplitMode};

/// Classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(rhs: &F, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(y);
    let k2 = rhs(&(y + &k1 * (h / 2.0)));
    let k3 = rhs(&(y + &k2 * (h / 2.0)));
    let k4 = rhs(&(y + &k3 * h));
    y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

pub fn rk4_step_fallible<F>(rhs: &F, y: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = rhs(y)?;
    let k2 = rhs(&(y + &k1 * (h / 2.0)))?;
    let k3 = rhs(&(y + &k2 * (h / 2.0)))?;
    let k4 = rhs(&(y + &k3 * h))?;
    Ok(y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeSource {
    ExactProvided,
    ChainRule,
    Bootstrapped,
}

/// `explicit[k]`, `implicit[k]` hold the `k`-th time derivative of `f^E`
/// and `f^I` along the solution, `k = 0..p`.
#[derive(Debug, Clone)]
pub struct AdditiveDerivatives {
    pub y0: DVector<f64>,
    pub explicit: Vec<DVector<f64>>,
    pub implicit: Vec<DVector<f64>>,
    pub source: DerivativeSource,
}

/// `x[k]`, `z[k]` hold the `k`-th time derivatives, `k = 0..=p`.
#[derive(Debug, Clone)]
pub struct ComponentDerivatives {
    pub x: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub source: DerivativeSource,
}

#[derive(Debug, Clone, Copy)]
pub struct StartOptions {
    /// Fall back to finite differences of a fine Runge-Kutta run when
    /// neither exact derivatives nor the chain rule cover order `p`.
    pub allow_bootstrap: bool,
}

impl Default for StartOptions {
    fn default() -> Self {
        StartOptions { allow_bootstrap: true }
    }
}

/// Highest derivative order that the chain rule formulas provide.
const CHAIN_RULE_MAX: usize = 2;
/// Highest order the bootstrap stencils provide.
const BOOTSTRAP_MAX: usize = 4;
/// Tolerance on `g(x0, z0)` for DAE initial data.
const CONSISTENCY_TOL: f64 = 1e-10;
/// Below this `ε` the `z` derivatives come from the reduced (DAE) formulas.
const DAE_DERIVATIVE_EPS: f64 = 1e-5;

fn close(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    a.len() == b.len() && (a - b).amax() <= 1e-12 * (1.0 + b.amax())
}

/// Exact split derivatives at `t`, `k = 0..p`, or `None` when the problem has
/// none.
pub fn exact_additive_derivatives(problem: &AdditiveProblem, t: f64, p: usize) -> Option<AdditiveDerivatives> {
    let exact = problem.exact.as_ref()?;
    let d = problem.split_derivatives.as_ref()?;
    let mut explicit = Vec::with_capacity(p);
    let mut implicit = Vec::with_capacity(p);
    for k in 0..p {
        let (e, i) = d(k, t)?;
        explicit.push(e);
        implicit.push(i);
    }
    Some(AdditiveDerivatives {
        y0: exact(t),
        explicit,
        implicit,
        source: DerivativeSource::ExactProvided,
    })
}

/// Exact derivatives of `x`, `z` at `t`, `k = 0..=p`.
pub fn exact_component_derivatives(problem: &SingularProblem, t: f64, p: usize) -> Option<ComponentDerivatives> {
    let d = problem.derivatives.as_ref()?;
    let mut x = Vec::with_capacity(p + 1);
    let mut z = Vec::with_capacity(p + 1);
    for k in 0..=p {
        let (a, b) = d(k, t)?;
        x.push(a);
        z.push(b);
    }
    Some(ComponentDerivatives {
        x,
        z,
        source: DerivativeSource::ExactProvided,
    })
}

fn additive_chain_rule(problem: &AdditiveProblem, p: usize) -> Option<AdditiveDerivatives> {
    let y = &problem.y0;
    let fe = (problem.fe)(y);
    let fi = (problem.fi)(y);
    let mut explicit = vec![fe.clone()];
    let mut implicit = vec![fi.clone()];
    if p >= 2 {
        let je = problem.jac_e.as_ref()?;
        let dy = &fe + &fi;
        explicit.push(je(y) * &dy);
        implicit.push((problem.jac_i)(y) * &dy);
    }
    Some(AdditiveDerivatives {
        y0: y.clone(),
        explicit,
        implicit,
        source: DerivativeSource::ChainRule,
    })
}

/// Step size of the bootstrap integration: `h/64`, reduced further so that
/// `hb ‖J‖∞ <= 1/2` keeps explicit RK4 stable.
fn bootstrap_step(h: f64, jac_norm: f64) -> f64 {
    let hb = h / 64.0;
    if jac_norm > 0.0 {
        hb.min(0.5 / jac_norm)
    } else {
        hb
    }
}

/// Central difference approximations of derivatives `0..=kmax` of a
/// function sampled at `t0 + i hb`, `i = -2..=2`.
fn stencil(samples: &[DVector<f64>; 5], hb: f64, kmax: usize) -> Vec<DVector<f64>> {
    let [m2, m1, c, p1, p2] = samples;
    let mut out = vec![c.clone()];
    if kmax >= 1 {
        out.push((m2 - p2 + (p1 - m1) * 8.0) / (12.0 * hb));
    }
    if kmax >= 2 {
        out.push(((p1 + m1) * 16.0 - (p2 + m2) - c * 30.0) / (12.0 * hb * hb));
    }
    if kmax >= 3 {
        out.push((p2 - m2 - (p1 - m1) * 2.0) / (2.0 * hb * hb * hb));
    }
    out
}

/// Values at `t0 + i hb`, `i = -2..=2`, from two RK4 steps each way.
fn rk4_fan<F>(rhs: &F, y0: &DVector<f64>, hb: f64) -> [DVector<f64>; 5]
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let p1 = rk4_step(rhs, y0, hb);
    let p2 = rk4_step(rhs, &p1, hb);
    let m1 = rk4_step(rhs, y0, -hb);
    let m2 = rk4_step(rhs, &m1, -hb);
    [m2, m1, y0.clone(), p1, p2]
}

fn check_bootstrap_order(p: usize) -> Result<()> {
    if p > BOOTSTRAP_MAX {
        return Err(GlmError::Bootstrap(format!(
            "finite-difference bootstrap supports p <= {BOOTSTRAP_MAX}, got {p}"
        )));
    }
    Ok(())
}

/// Split derivatives by finite differences of `f^E`, `f^I` along a fine RK4
/// trajectory through `y0`.
pub fn bootstrap_additive(problem: &AdditiveProblem, p: usize, h: f64) -> Result<AdditiveDerivatives> {
    check_bootstrap_order(p)?;
    let y0 = &problem.y0;
    let jac = (problem.jac_i)(y0) + problem.jac_e.as_ref().map_or_else(|| DMatrix::zeros(y0.len(), y0.len()), |j| j(y0));
    let hb = bootstrap_step(h, jac.abs().row_sum().amax());
    let rhs = |y: &DVector<f64>| (problem.fe)(y) + (problem.fi)(y);
    let ys = rk4_fan(&rhs, y0, hb);
    if ys.iter().any(|y| y.iter().any(|v| !v.is_finite())) {
        return Err(GlmError::Bootstrap("bootstrap trajectory is not finite".into()));
    }
    let fe = ys.clone().map(|y| (problem.fe)(&y));
    let fi = ys.map(|y| (problem.fi)(&y));
    let kmax = p.saturating_sub(1);
    let mut explicit = stencil(&fe, hb, kmax);
    let mut implicit = stencil(&fi, hb, kmax);
    explicit.truncate(p);
    implicit.truncate(p);
    Ok(AdditiveDerivatives {
        y0: y0.clone(),
        explicit,
        implicit,
        source: DerivativeSource::Bootstrapped,
    })
}

/// Derivative table at `t0`, trying exact data, the chain rule and the
/// bootstrap in that order.
pub fn additive_derivatives(problem: &AdditiveProblem, p: usize, h: f64, opts: StartOptions) -> Result<AdditiveDerivatives> {
    if let Some(d) = exact_additive_derivatives(problem, problem.t0, p) {
        if close(&problem.y0, &d.y0) {
            return Ok(AdditiveDerivatives {
                y0: problem.y0.clone(),
                ..d
            });
        }
    }
    if p <= CHAIN_RULE_MAX {
        if let Some(d) = additive_chain_rule(problem, p) {
            return Ok(d);
        }
    }
    if !opts.allow_bootstrap {
        return Err(GlmError::MissingDerivatives { order: p });
    }
    bootstrap_additive(problem, p, h)
}

/// Directional derivative of a matrix field along `(dx, dz)` by central
/// differences.
fn directional<F>(m: &F, x: &DVector<f64>, z: &DVector<f64>, dx: &DVector<f64>, dz: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + ?Sized,
{
    let scale = 1.0 + x.amax().max(z.amax());
    let dir = dx.amax().max(dz.amax());
    if dir == 0.0 {
        let probe = m(x, z);
        return DMatrix::zeros(probe.nrows(), probe.ncols());
    }
    let delta = 1e-5 * scale / dir;
    let plus = m(&(x + dx * delta), &(z + dz * delta));
    let minus = m(&(x - dx * delta), &(z - dz * delta));
    (plus - minus) / (2.0 * delta)
}

fn solve_gz(problem: &SingularProblem, x: &DVector<f64>, z: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    (problem.g_z)(x, z)
        .lu()
        .solve(rhs)
        .ok_or_else(|| GlmError::AlgebraicSolve {
            stage: 0,
            reason: "dg/dz is singular at the initial point".into(),
        })
}

fn component_chain_rule(problem: &SingularProblem, p: usize) -> Result<ComponentDerivatives> {
    let (x, z) = (&problem.x0, &problem.z0);
    let eps = problem.eps;
    let reduced = eps <= DAE_DERIVATIVE_EPS;
    let gx = (problem.g_x)(x, z);
    let gz = (problem.g_z)(x, z);
    let dx = (problem.f)(x, z);
    let dz = if reduced {
        -solve_gz(problem, x, z, &(&gx * &dx))?
    } else {
        (problem.g)(x, z) / eps
    };
    let mut out = ComponentDerivatives {
        x: vec![x.clone(), dx.clone()],
        z: vec![z.clone(), dz.clone()],
        source: DerivativeSource::ChainRule,
    };
    if p >= 2 {
        let ddx = (problem.f_x)(x, z) * &dx + (problem.f_z)(x, z) * &dz;
        let ddz = if reduced {
            let dgx = directional(problem.g_x.as_ref(), x, z, &dx, &dz);
            let dgz = directional(problem.g_z.as_ref(), x, z, &dx, &dz);
            let rhs = &gx * &ddx + dgx * &dx + dgz * &dz;
            -solve_gz(problem, x, z, &rhs)?
        } else {
            (&gx * &dx + &gz * &dz) / eps
        };
        out.x.push(ddx);
        out.z.push(ddz);
    }
    out.x.truncate(p + 1);
    out.z.truncate(p + 1);
    Ok(out)
}

/// Derivatives of the singularly perturbed system by finite differences of
/// a fine RK4 run on `(x, z)`.
pub fn bootstrap_component(problem: &SingularProblem, p: usize, h: f64) -> Result<ComponentDerivatives> {
    check_bootstrap_order(p)?;
    if problem.mode() == ProblemMode::Dae {
        return Err(GlmError::Bootstrap(
            "derivative bootstrap is not available for eps = 0".into(),
        ));
    }
    let (mx, mz) = (problem.mx(), problem.mz());
    let eps = problem.eps;
    let y0 = DVector::from_iterator(mx + mz, problem.x0.iter().chain(problem.z0.iter()).copied());
    let split = |y: &DVector<f64>| (y.rows(0, mx).into_owned(), y.rows(mx, mz).into_owned());
    let rhs = |y: &DVector<f64>| {
        let (x, z) = split(y);
        let fx = (problem.f)(&x, &z);
        let gz = (problem.g)(&x, &z) / eps;
        DVector::from_iterator(mx + mz, fx.iter().chain(gz.iter()).copied())
    };
    let (x, z) = (&problem.x0, &problem.z0);
    let norm = |m: DMatrix<f64>| m.abs().row_sum().amax();
    let jac_norm = (norm((problem.f_x)(x, z)) + norm((problem.f_z)(x, z)))
        .max((norm((problem.g_x)(x, z)) + norm((problem.g_z)(x, z))) / eps);
    let hb = bootstrap_step(h, jac_norm);
    let ys = rk4_fan(&rhs, &y0, hb);
    if ys.iter().any(|y| y.iter().any(|v| !v.is_finite())) {
        return Err(GlmError::Bootstrap("bootstrap trajectory is not finite".into()));
    }
    let derivs = stencil(&ys, hb, p.min(3));
    let mut out = ComponentDerivatives {
        x: Vec::new(),
        z: Vec::new(),
        source: DerivativeSource::Bootstrapped,
    };
    for d in derivs {
        let (a, b) = split(&d);
        out.x.push(a);
        out.z.push(b);
    }
    if p == 4 {
        // Fourth derivative from the third derivative of the right-hand side.
        let fs = ys.map(|y| rhs(&y));
        let (a, b) = split(&stencil(&fs, hb, 3)[3]);
        out.x.push(a);
        out.z.push(b);
    }
    Ok(out)
}

/// Derivative table at `t0` for the component and DAE forms.
pub fn component_derivatives(problem: &SingularProblem, p: usize, h: f64, opts: StartOptions) -> Result<ComponentDerivatives> {
    if problem.mode() == ProblemMode::Dae {
        let residual = (problem.g)(&problem.x0, &problem.z0).amax();
        if !(residual <= CONSISTENCY_TOL) {
            return Err(GlmError::InconsistentInitialData { residual });
        }
    }
    if let Some(d) = exact_component_derivatives(problem, problem.t0, p) {
        if close(&problem.x0, &d.x[0]) && close(&problem.z0, &d.z[0]) {
            return Ok(d);
        }
    }
    if p <= CHAIN_RULE_MAX {
        return component_chain_rule(problem, p);
    }
    if !opts.allow_bootstrap {
        return Err(GlmError::MissingDerivatives { order: p });
    }
    bootstrap_component(problem, p, h)
}

/// `𝕪^[0]` for an additive pair from a derivative table.
pub fn nordsieck_additive(pair: &ImexGlmPair, d: &AdditiveDerivatives, h: f64) -> DMatrix<f64> {
    let r = pair.r();
    let w0 = pair.explicit.w0();
    let mut y = DMatrix::zeros(d.y0.len(), r);
    for j in 0..r {
        let mut col = &d.y0 * w0[j];
        let mut hk = 1.0;
        for k in 1..=pair.p() {
            hk *= h;
            col.axpy(pair.explicit.w[(j, k)] * hk, &d.explicit[k - 1], 1.0);
            col.axpy(pair.implicit.w[(j, k)] * hk, &d.implicit[k - 1], 1.0);
        }
        y.set_column(j, &col);
    }
    y
}

fn nordsieck(w: &DMatrix<f64>, ders: &[DVector<f64>], h: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(ders[0].len(), w.nrows());
    for j in 0..w.nrows() {
        let mut col = &ders[0] * w[(j, 0)];
        let mut hk = 1.0;
        for (k, dk) in ders.iter().enumerate().skip(1) {
            hk *= h;
            col.axpy(w[(j, k)] * hk, dk, 1.0);
        }
        out.set_column(j, &col);
    }
    out
}

/// `(𝕩^[0], 𝕫^[0])` from a derivative table: `W^E` weighs `x`, `W^I` weighs `z`.
pub fn nordsieck_component(pair: &ImexGlmPair, d: &ComponentDerivatives, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (nordsieck(&pair.explicit.w, &d.x, h), nordsieck(&pair.implicit.w, &d.z, h))
}

pub fn start_additive(pair: &ImexGlmPair, problem: &AdditiveProblem, h: f64, opts: StartOptions) -> Result<ExternalState> {
    if pair.mode != SplitMode::Additive {
        return Err(GlmError::Incompatible(format!(
            "pair `{}` is in component mode and cannot start an additive problem",
            pair.name
        )));
    }
    let d = additive_derivatives(problem, pair.p(), h, opts)?;
    Ok(ExternalState::additive(nordsieck_additive(pair, &d, h), problem.t0, h))
}

pub fn start_component(pair: &ImexGlmPair, problem: &SingularProblem, h: f64, opts: StartOptions) -> Result<ExternalState> {
    let d = component_derivatives(problem, pair.p(), h, opts)?;
    let (x, z) = nordsieck_component(pair, &d, h);
    Ok(ExternalState::component(x, z, problem.t0, h))
}

/// Starting procedure matching the problem mode.
pub fn start(pair: &ImexGlmPair, problem: &PartitionedProblem, h: f64, opts: StartOptions) -> Result<ExternalState> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(GlmError::param("h", "must be positive and finite"));
    }
    match problem {
        PartitionedProblem::Additive(p) => start_additive(pair, p, h, opts),
        PartitionedProblem::Singular(p) => start_component(pair, p, h, opts),
    }
}

#[cfg(test)]
mod tests;
