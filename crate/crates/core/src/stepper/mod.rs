//! One fixed step of an IMEX GLM and fixed-step trajectories.
//!
//! External stages are stored as `m × r` matrices whose column `j` is the
//! block `𝕪_j`; the column-major storage is exactly the stacked `r·m` vector.

mod newton;

pub use newton::{newton_solve, NewtonOutcome};

use nalgebra::{DMatrix, DVector};

use crate::error::{GlmError, Result};
use crate::problems::{AdditiveProblem, PartitionedProblem, ProblemMode, SingularProblem};
use crate::tableau::{GlmTableau, ImexGlmPair, SplitMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianRefresh {
    EveryIteration,
    /// Evaluated once at the initial guess of each stage solve.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    pub jacobian_refresh: JacobianRefresh,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_iters: 25,
            jacobian_refresh: JacobianRefresh::EveryIteration,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(GlmError::param("newton tolerances", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(GlmError::param("max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExternalData {
    Additive { y: DMatrix<f64> },
    Component { x: DMatrix<f64>, z: DMatrix<f64> },
}

/// External stages `𝕪^[n]` (or `𝕩^[n]`, `𝕫^[n]`) at `t_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalState {
    pub data: ExternalData,
    pub t: f64,
    /// Start time; `t = t_start + n h` avoids accumulating rounding.
    t_start: f64,
    pub h: f64,
    pub n: usize,
}

impl ExternalState {
    pub fn additive(y: DMatrix<f64>, t: f64, h: f64) -> Self {
        ExternalState {
            data: ExternalData::Additive { y },
            t,
            t_start: t,
            h,
            n: 0,
        }
    }

    pub fn component(x: DMatrix<f64>, z: DMatrix<f64>, t: f64, h: f64) -> Self {
        ExternalState {
            data: ExternalData::Component { x, z },
            t,
            t_start: t,
            h,
            n: 0,
        }
    }

    pub fn mode(&self) -> SplitMode {
        match self.data {
            ExternalData::Additive { .. } => SplitMode::Additive,
            ExternalData::Component { .. } => SplitMode::Component,
        }
    }

    pub fn y(&self) -> Result<&DMatrix<f64>> {
        match &self.data {
            ExternalData::Additive { y } => Ok(y),
            _ => Err(GlmError::Incompatible("expected additive external stages".into())),
        }
    }

    pub fn xz(&self) -> Result<(&DMatrix<f64>, &DMatrix<f64>)> {
        match &self.data {
            ExternalData::Component { x, z } => Ok((x, z)),
            _ => Err(GlmError::Incompatible("expected component external stages".into())),
        }
    }

    /// Stacked `r·m` vector(s): `y`, or `x` followed by `z`.
    pub fn stacked(&self) -> Vec<f64> {
        match &self.data {
            ExternalData::Additive { y } => y.as_slice().to_vec(),
            ExternalData::Component { x, z } => x.as_slice().iter().chain(z.as_slice()).copied().collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.stacked().iter().all(|v| v.is_finite())
    }

    pub(crate) fn advanced(&self, data: ExternalData) -> Self {
        let n = self.n + 1;
        ExternalState {
            data,
            t: self.t_start + n as f64 * self.h,
            t_start: self.t_start,
            h: self.h,
            n,
        }
    }
}

/// Internal stages of one step, stored column-wise (`m × s`).
#[derive(Debug, Clone, PartialEq)]
pub enum StageData {
    Additive { y: DMatrix<f64> },
    Component { x: DMatrix<f64>, z: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageValues {
    pub data: StageData,
    /// Largest iteration count among the Newton solves of this step.
    pub newton_iterations: usize,
    /// Iterations summed over every Newton solve of this step.
    pub newton_total: usize,
    /// Number of Newton solves performed.
    pub newton_solves: usize,
    /// Largest final stage residual (max norm).
    pub residual_norm: f64,
    /// Stage derivatives `h f^E(Y)`, `h f^I(Y)` (additive) or `h f`, `(h/ε) g`
    /// (component), column-wise.
    pub(crate) increments: (DMatrix<f64>, DMatrix<f64>),
}

impl StageValues {
    /// Stage `i` of the solution variable(s).
    pub fn stage(&self, i: usize) -> (DVector<f64>, Option<DVector<f64>>) {
        match &self.data {
            StageData::Additive { y } => (y.column(i).into_owned(), None),
            StageData::Component { x, z } => (x.column(i).into_owned(), Some(z.column(i).into_owned())),
        }
    }
}

fn check_state(pair: &ImexGlmPair, m: usize, ext: &DMatrix<f64>, name: &str) -> Result<()> {
    if ext.nrows() != m || ext.ncols() != pair.r() {
        return Err(GlmError::Dimension {
            field: name.into(),
            expected: format!("{m}x{}", pair.r()),
            found: format!("{}x{}", ext.nrows(), ext.ncols()),
        });
    }
    Ok(())
}

/// `Σ_j ext[:, j] * coef[i, j]` for every row `i` of `coef`, evaluated in
/// index order so that repeated runs are bit-identical.
pub(crate) fn combine(ext: &DMatrix<f64>, coef: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(ext.nrows(), coef.nrows());
    for i in 0..coef.nrows() {
        let mut col = out.column_mut(i);
        for j in 0..coef.ncols() {
            let a = coef[(i, j)];
            if a != 0.0 {
                col.axpy(a, &ext.column(j), 1.0);
            }
        }
    }
    out
}

fn lower_part_sum(out: &mut DVector<f64>, coef: &DMatrix<f64>, i: usize, incr: &DMatrix<f64>) {
    for j in 0..i {
        let a = coef[(i, j)];
        if a != 0.0 {
            out.axpy(a, &incr.column(j), 1.0);
        }
    }
}

/// Solves the internal stage equations of one step.
///
/// Newton convergence is measured relative to `max(‖κ_i‖, ‖Y_i‖)`, where `κ_i`
/// is the known part of stage `i`: cancellation against `κ_i` bounds the
/// attainable residual when the external stages are large, as they are for
/// Nordsieck starts of very stiff problems.
pub fn solve_stages_newton(
    pair: &ImexGlmPair,
    problem: &PartitionedProblem,
    state: &ExternalState,
    cfg: &NewtonConfig,
) -> Result<StageValues> {
    cfg.validate()?;
    match (problem, &state.data) {
        (PartitionedProblem::Additive(p), ExternalData::Additive { y }) => additive_stages(pair, p, y, state.h, cfg),
        (PartitionedProblem::Singular(p), ExternalData::Component { x, z }) if p.eps > 0.0 => {
            component_stages(pair, p, x, z, state.h, cfg)
        }
        (PartitionedProblem::Singular(p), ExternalData::Component { x, z }) => {
            crate::dae::dae_stages(pair, p, x, z, state.h, cfg)
        }
        _ => Err(GlmError::Incompatible(format!(
            "problem `{}` ({}) does not match {} external stages",
            problem.name(),
            problem.mode().as_str(),
            state.mode().as_str()
        ))),
    }
}

fn additive_stages(
    pair: &ImexGlmPair,
    p: &AdditiveProblem,
    y: &DMatrix<f64>,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<StageValues> {
    if pair.mode != SplitMode::Additive {
        return Err(GlmError::Incompatible(format!(
            "pair `{}` is in component mode and cannot step an additive problem",
            pair.name
        )));
    }
    let m = p.m();
    check_state(pair, m, y, "y")?;
    let (ae, ai) = (&pair.explicit.a, &pair.implicit.a);
    let s = pair.s();
    let eta = combine(y, &pair.explicit.u);
    if !pair.implicit.is_lower_triangular() {
        return additive_stages_dense(pair, p, &eta, h, cfg);
    }
    let mut stages = DMatrix::zeros(m, s);
    let mut ke = DMatrix::zeros(m, s);
    let mut ki = DMatrix::zeros(m, s);
    let mut stats = Stats::default();
    for i in 0..s {
        let mut kappa = eta.column(i).into_owned();
        let mut acc = DVector::zeros(m);
        lower_part_sum(&mut acc, ae, i, &ke);
        lower_part_sum(&mut acc, ai, i, &ki);
        kappa += acc;
        let d = ai[(i, i)];
        // Unknown δ = Y_i - κ_i solves δ - h d f^I(κ_i + δ) = 0.
        let delta0 = eta.column(i) - &kappa;
        let outcome = newton_solve(
            delta0,
            |delta| {
                let yi = &kappa + delta;
                delta - (p.fi)(&yi) * (h * d)
            },
            |delta| {
                let yi = &kappa + delta;
                DMatrix::identity(m, m) - (p.jac_i)(&yi) * (h * d)
            },
            |delta| (&kappa + delta).amax().max(kappa.amax()),
            cfg,
            i,
        )?;
        stats.record(&outcome);
        let yi = &kappa + &outcome.x;
        ke.set_column(i, &((p.fe)(&yi) * h));
        ki.set_column(i, &((p.fi)(&yi) * h));
        stages.set_column(i, &yi);
    }
    Ok(stats.finish(StageData::Additive { y: stages }, (ke, ki)))
}

/// All `s·m` unknowns at once; the Jacobian includes `f^E` terms when the
/// problem provides `∂f^E/∂y`.
fn additive_stages_dense(
    pair: &ImexGlmPair,
    p: &AdditiveProblem,
    eta: &DMatrix<f64>,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<StageValues> {
    let m = p.m();
    let s = pair.s();
    let (ae, ai) = (&pair.explicit.a, &pair.implicit.a);
    let unstack = |v: &DVector<f64>| DMatrix::from_column_slice(m, s, v.as_slice());
    let residual = |v: &DVector<f64>| {
        let yy = unstack(v);
        let mut fe = DMatrix::zeros(m, s);
        let mut fi = DMatrix::zeros(m, s);
        for j in 0..s {
            let yj = yy.column(j).into_owned();
            fe.set_column(j, &((p.fe)(&yj) * h));
            fi.set_column(j, &((p.fi)(&yj) * h));
        }
        let r = &yy - eta - combine(&fe, ae) - combine(&fi, ai);
        DVector::from_column_slice(r.as_slice())
    };
    let jacobian = |v: &DVector<f64>| {
        let yy = unstack(v);
        let mut jac = DMatrix::identity(s * m, s * m);
        for j in 0..s {
            let yj = yy.column(j).into_owned();
            let ji = (p.jac_i)(&yj) * h;
            let je = p.jac_e.as_ref().map(|f| f(&yj) * h);
            for i in 0..s {
                let mut block = &ji * ai[(i, j)];
                if let Some(je) = &je {
                    block += je * ae[(i, j)];
                }
                let mut view = jac.view_mut((i * m, j * m), (m, m));
                view -= block;
            }
        }
        jac
    };
    let x0 = DVector::from_column_slice(eta.as_slice());
    let eta_norm = eta.amax();
    let outcome = newton_solve(x0, residual, jacobian, |v| v.amax().max(eta_norm), cfg, 0)?;
    let mut stats = Stats::default();
    stats.record(&outcome);
    let yy = unstack(&outcome.x);
    let mut ke = DMatrix::zeros(m, s);
    let mut ki = DMatrix::zeros(m, s);
    for j in 0..s {
        let yj = yy.column(j).into_owned();
        ke.set_column(j, &((p.fe)(&yj) * h));
        ki.set_column(j, &((p.fi)(&yj) * h));
    }
    Ok(stats.finish(StageData::Additive { y: yy }, (ke, ki)))
}

fn component_stages(
    pair: &ImexGlmPair,
    p: &SingularProblem,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<StageValues> {
    let (mx, mz) = (p.mx(), p.mz());
    check_state(pair, mx, x, "x")?;
    check_state(pair, mz, z, "z")?;
    let s = pair.s();
    let (ae, ai) = (&pair.explicit.a, &pair.implicit.a);
    let xi_known = combine(x, &pair.explicit.u);
    let zeta = combine(z, &pair.implicit.u);
    let scale = p.eps / h;
    if !pair.implicit.is_lower_triangular() {
        return component_stages_dense(pair, p, &xi_known, &zeta, h, cfg);
    }
    let mut xs = DMatrix::zeros(mx, s);
    let mut zs = DMatrix::zeros(mz, s);
    let mut kx = DMatrix::zeros(mx, s);
    let mut kz = DMatrix::zeros(mz, s);
    let mut stats = Stats::default();
    for i in 0..s {
        let mut xi = xi_known.column(i).into_owned();
        lower_part_sum(&mut xi, ae, i, &kx);
        let mut kappa = zeta.column(i).into_owned();
        lower_part_sum(&mut kappa, ai, i, &kz);
        let d = ai[(i, i)];
        let zi;
        if d == 0.0 {
            zi = kappa.clone();
            kz.set_column(i, &((p.g)(&xi, &zi) / scale));
        } else {
            // Scaled stage equation (ε/h) δ - d g(X_i, κ_i + δ) = 0 with δ = Z_i - κ_i.
            let delta0 = zeta.column(i) - &kappa;
            let outcome = newton_solve(
                delta0,
                |delta| delta * scale - (p.g)(&xi, &(&kappa + delta)) * d,
                |delta| DMatrix::identity(mz, mz) * scale - (p.g_z)(&xi, &(&kappa + delta)) * d,
                |delta| (&kappa + delta).amax().max(kappa.amax()),
                cfg,
                i,
            )?;
            stats.record(&outcome);
            zi = &kappa + &outcome.x;
            // Recover (h/ε) g from the stage equation instead of re-evaluating
            // g, which would amplify the Newton residual by h/ε.
            kz.set_column(i, &(&outcome.x / d));
        }
        kx.set_column(i, &((p.f)(&xi, &zi) * h));
        xs.set_column(i, &xi);
        zs.set_column(i, &zi);
    }
    Ok(stats.finish(StageData::Component { x: xs, z: zs }, (kx, kz)))
}

/// Joint Newton on all `Z` stages. The explicit coupling through `X(Z)` is
/// left out of the Jacobian, which then has blocks `(ε/h) δ_ij I - a_ij g_z`.
fn component_stages_dense(
    pair: &ImexGlmPair,
    p: &SingularProblem,
    xi_known: &DMatrix<f64>,
    zeta: &DMatrix<f64>,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<StageValues> {
    let (mx, mz) = (p.mx(), p.mz());
    let s = pair.s();
    let (ae, ai) = (&pair.explicit.a, &pair.implicit.a);
    let scale = p.eps / h;
    let unstack = |v: &DVector<f64>| DMatrix::from_column_slice(mz, s, v.as_slice());
    let explicit_stages = |zz: &DMatrix<f64>| {
        let mut xs = DMatrix::zeros(mx, s);
        let mut kx = DMatrix::zeros(mx, s);
        for i in 0..s {
            let mut xi = xi_known.column(i).into_owned();
            lower_part_sum(&mut xi, ae, i, &kx);
            kx.set_column(i, &((p.f)(&xi, &zz.column(i).into_owned()) * h));
            xs.set_column(i, &xi);
        }
        (xs, kx)
    };
    let residual = |v: &DVector<f64>| {
        let zz = unstack(v);
        let (xs, _) = explicit_stages(&zz);
        let mut g = DMatrix::zeros(mz, s);
        for j in 0..s {
            g.set_column(j, &(p.g)(&xs.column(j).into_owned(), &zz.column(j).into_owned()));
        }
        let r = (&zz - zeta) * scale - combine(&g, ai);
        DVector::from_column_slice(r.as_slice())
    };
    let jacobian = |v: &DVector<f64>| {
        let zz = unstack(v);
        let (xs, _) = explicit_stages(&zz);
        let mut jac = DMatrix::identity(s * mz, s * mz) * scale;
        for j in 0..s {
            let gz = (p.g_z)(&xs.column(j).into_owned(), &zz.column(j).into_owned());
            for i in 0..s {
                let mut view = jac.view_mut((i * mz, j * mz), (mz, mz));
                view -= &gz * ai[(i, j)];
            }
        }
        jac
    };
    let outcome = newton_solve(
        DVector::from_column_slice(zeta.as_slice()),
        residual,
        jacobian,
        |v| v.amax().max(zeta.amax()),
        cfg,
        0,
    )?;
    let mut stats = Stats::default();
    stats.record(&outcome);
    let zz = unstack(&outcome.x);
    let (xs, kx) = explicit_stages(&zz);
    let kz = match ai.clone().lu().solve(&(&zz - zeta).transpose()) {
        Some(k) if p.eps > 0.0 && k.iter().all(|v| v.is_finite()) => k.transpose(),
        _ => {
            let mut k = DMatrix::zeros(mz, s);
            for j in 0..s {
                k.set_column(j, &((p.g)(&xs.column(j).into_owned(), &zz.column(j).into_owned()) / scale));
            }
            k
        }
    };
    Ok(stats.finish(StageData::Component { x: xs, z: zz }, (kx, kz)))
}

#[derive(Default)]
pub(crate) struct Stats {
    max_iters: usize,
    total: usize,
    solves: usize,
    residual: f64,
}

impl Stats {
    pub(crate) fn record(&mut self, o: &NewtonOutcome) {
        self.max_iters = self.max_iters.max(o.iterations);
        self.total += o.iterations;
        self.solves += 1;
        self.residual = self.residual.max(o.residual_norm);
    }

    pub(crate) fn finish(self, data: StageData, increments: (DMatrix<f64>, DMatrix<f64>)) -> StageValues {
        StageValues {
            data,
            newton_iterations: self.max_iters,
            newton_total: self.total,
            newton_solves: self.solves,
            residual_norm: self.residual,
            increments,
        }
    }
}

/// `𝕪 ← 𝕪 Vᵀ + K^E (B^E)ᵀ + K^I (B^I)ᵀ` with `K = h f(Y)` column-wise.
fn update(ext: &DMatrix<f64>, v: &DMatrix<f64>, parts: &[(&DMatrix<f64>, &DMatrix<f64>)]) -> DMatrix<f64> {
    let mut out = combine(ext, v);
    for (k, b) in parts {
        out += combine(k, b);
    }
    out
}

/// One step of the additive scheme; also returns the internal stages.
pub fn step_additive(
    pair: &ImexGlmPair,
    problem: &AdditiveProblem,
    state: &ExternalState,
    cfg: &NewtonConfig,
) -> Result<(ExternalState, StageValues)> {
    cfg.validate()?;
    let y = state.y()?;
    let stages = additive_stages(pair, problem, y, state.h, cfg)?;
    let (ke, ki) = &stages.increments;
    let y_new = update(y, &pair.explicit.v, &[(ke, &pair.explicit.b), (ki, &pair.implicit.b)]);
    Ok((state.advanced(ExternalData::Additive { y: y_new }), stages))
}

pub fn imex_step_additive(
    pair: &ImexGlmPair,
    problem: &AdditiveProblem,
    state: &ExternalState,
    cfg: &NewtonConfig,
) -> Result<ExternalState> {
    step_additive(pair, problem, state, cfg).map(|(s, _)| s)
}

/// One step of the component scheme (`ε > 0`); also returns the stages.
pub fn step_component(
    pair: &ImexGlmPair,
    problem: &SingularProblem,
    state: &ExternalState,
    cfg: &NewtonConfig,
) -> Result<(ExternalState, StageValues)> {
    cfg.validate()?;
    if problem.eps <= 0.0 {
        return Err(GlmError::Incompatible(
            "component stepping needs eps > 0; use the DAE scheme for eps = 0".into(),
        ));
    }
    let (x, z) = state.xz()?;
    let stages = component_stages(pair, problem, x, z, state.h, cfg)?;
    let (kx, kz) = &stages.increments;
    let x_new = update(x, &pair.explicit.v, &[(kx, &pair.explicit.b)]);
    let z_new = update(z, &pair.implicit.v, &[(kz, &pair.implicit.b)]);
    Ok((state.advanced(ExternalData::Component { x: x_new, z: z_new }), stages))
}

pub fn imex_step_component(
    pair: &ImexGlmPair,
    problem: &SingularProblem,
    state: &ExternalState,
    cfg: &NewtonConfig,
) -> Result<ExternalState> {
    step_component(pair, problem, state, cfg).map(|(s, _)| s)
}

/// One step of a single GLM on `y' = f(y)` with lower triangular `A`.
/// Reference implementation for checking the IMEX step against its
/// one-component reductions.
pub fn glm_step(
    t: &GlmTableau,
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    jac: &dyn Fn(&DVector<f64>) -> DMatrix<f64>,
    y: &DMatrix<f64>,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<DMatrix<f64>> {
    if !t.is_lower_triangular() {
        return Err(GlmError::Incompatible("reference step needs lower triangular A".into()));
    }
    let m = y.nrows();
    let eta = combine(y, &t.u);
    let mut k = DMatrix::zeros(m, t.s);
    for i in 0..t.s {
        let mut kappa = eta.column(i).into_owned();
        let mut acc = DVector::zeros(m);
        lower_part_sum(&mut acc, &t.a, i, &k);
        kappa += acc;
        let d = t.a[(i, i)];
        let yi = if d == 0.0 {
            kappa
        } else {
            let delta0 = eta.column(i) - &kappa;
            let o = newton_solve(
                delta0,
                |delta| delta - f(&(&kappa + delta)) * (h * d),
                |delta| DMatrix::identity(m, m) - jac(&(&kappa + delta)) * (h * d),
                |delta| (&kappa + delta).amax().max(kappa.amax()),
                cfg,
                i,
            )?;
            &kappa + o.x
        };
        k.set_column(i, &(f(&yi) * h));
    }
    Ok(update(y, &t.v, &[(&k, &t.b)]))
}

/// Output of [`integrate`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Recorded states, starting with the initial one.
    pub states: Vec<ExternalState>,
    /// Internal stages of the last step.
    pub last_stages: Option<StageValues>,
    pub newton_total: usize,
    pub newton_solves: usize,
    pub newton_max: usize,
}

impl Trajectory {
    pub fn last(&self) -> &ExternalState {
        self.states.last().expect("trajectory always holds the initial state")
    }

    pub fn newton_avg(&self) -> f64 {
        if self.newton_solves == 0 {
            0.0
        } else {
            self.newton_total as f64 / self.newton_solves as f64
        }
    }
}

/// Number of steps of size `h` from `t0` to `t_final`; rejects spans that
/// are not a positive integer multiple of `h` to within `1e-9`.
pub fn step_count(t0: f64, t_final: f64, h: f64) -> Result<usize> {
    let ratio = (t_final - t0) / h;
    let n = ratio.round();
    if !ratio.is_finite() || n < 1.0 || (ratio - n).abs() > 1e-9 * n.max(1.0) {
        return Err(GlmError::NonIntegerStepCount { ratio });
    }
    Ok(n as usize)
}

/// Applies the step matching the problem mode until `t_final`, recording
/// every `stride`-th state plus the final one.
pub fn integrate(
    pair: &ImexGlmPair,
    problem: &PartitionedProblem,
    state0: ExternalState,
    t_final: f64,
    cfg: &NewtonConfig,
    stride: usize,
) -> Result<Trajectory> {
    cfg.validate()?;
    let n_steps = step_count(state0.t, t_final, state0.h)?;
    let stride = stride.max(1);
    let mut traj = Trajectory {
        states: vec![state0.clone()],
        last_stages: None,
        newton_total: 0,
        newton_solves: 0,
        newton_max: 0,
    };
    let mut state = state0;
    for n in 1..=n_steps {
        let result = match problem {
            PartitionedProblem::Additive(p) => step_additive(pair, p, &state, cfg),
            PartitionedProblem::Singular(p) if p.mode() == ProblemMode::Dae => crate::dae::step_dae(pair, p, &state, cfg),
            PartitionedProblem::Singular(p) => step_component(pair, p, &state, cfg),
        };
        let (next, stages) = result.map_err(|e| {
            if e.is_usage() {
                e
            } else {
                GlmError::StepFailure {
                    n,
                    t: state.t,
                    source: Box::new(e),
                }
            }
        })?;
        if !next.is_finite() {
            return Err(GlmError::Unstable { n, t: next.t });
        }
        traj.newton_total += stages.newton_total;
        traj.newton_solves += stages.newton_solves;
        traj.newton_max = traj.newton_max.max(stages.newton_iterations);
        if n % stride == 0 || n == n_steps {
            traj.states.push(next.clone());
        }
        traj.last_stages = Some(stages);
        state = next;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests;
