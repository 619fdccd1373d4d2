use nalgebra::{DMatrix, DVector};

use super::fit::{fit_order, OrderFit, FLOOR_FACTOR, UNIT_ROUNDOFF};
use super::{fmt_float, par_map};
use crate::error::{GlmError, Result};
use crate::problems::{PartitionedProblem, ProblemMode};
use crate::starting::{
    additive_derivatives, component_derivatives, exact_additive_derivatives, exact_component_derivatives,
    nordsieck_additive, nordsieck_component, start, AdditiveDerivatives, ComponentDerivatives, StartOptions,
};
use crate::stepper::{integrate, ExternalData, ExternalState, NewtonConfig, Trajectory};
use crate::tableau::ImexGlmPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// Nordsieck combination of the exact solution derivatives.
    Exact,
    /// Nordsieck combination of derivatives rebuilt (chain rule) from the
    /// endpoint stage of a run with step `h_min / 64`.
    SelfRefined,
}

impl ReferenceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReferenceKind::Exact => "exact",
            ReferenceKind::SelfRefined => "self-refined",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RungResult {
    pub h: f64,
    pub n_steps: usize,
    /// Max-norm error of the solution-carrying block (`y` or `x`).
    pub error_x: f64,
    /// Same for `z`; NaN for additive problems.
    pub error_z: f64,
    /// Max-norm error over every external block.
    pub error_full: f64,
    pub newton_avg: f64,
    pub newton_max: usize,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub pair: String,
    pub problem: String,
    pub mode: ProblemMode,
    pub ladder: Vec<RungResult>,
    pub fit_x: OrderFit,
    /// `None` for additive problems.
    pub fit_z: Option<OrderFit>,
    pub theoretical_x: f64,
    pub theoretical_z: Option<f64>,
    pub tolerance: f64,
    pub pass_x: bool,
    pub pass_z: bool,
    pub pass: bool,
    pub reference_kind: ReferenceKind,
}

#[derive(Debug, Clone, Copy)]
pub struct StudyOptions {
    pub newton: NewtonConfig,
    pub start: StartOptions,
    /// Overrides the ±0.2 (linear) / ±0.3 (nonlinear) pass tolerance.
    pub tolerance: Option<f64>,
    /// Refinement factor of the self-refined reference run.
    pub refine: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            newton: NewtonConfig::default(),
            start: StartOptions::default(),
            tolerance: None,
            refine: 64,
        }
    }
}

struct Sampled {
    x: DVector<f64>,
    z: Option<DVector<f64>>,
    full: Option<Vec<f64>>,
}

fn run(pair: &ImexGlmPair, problem: &PartitionedProblem, h: f64, t_final: f64, opts: &StudyOptions) -> Result<Trajectory> {
    let s0 = start(pair, problem, h, opts.start)?;
    integrate(pair, problem, s0, t_final, &opts.newton, usize::MAX)
}

/// Solution blocks and the full external state of a final state.
fn external_blocks(pair: &ImexGlmPair, state: &ExternalState) -> Sampled {
    let (bx, bz) = pair.solution_blocks();
    match &state.data {
        ExternalData::Additive { y } => Sampled {
            x: y.column(bx).into_owned(),
            z: None,
            full: Some(y.as_slice().to_vec()),
        },
        ExternalData::Component { x, z } => Sampled {
            x: x.column(bx).into_owned(),
            z: Some(z.column(bz).into_owned()),
            full: Some(x.as_slice().iter().chain(z.as_slice()).copied().collect()),
        },
    }
}

/// Stage at `c = 1` of the last step.
fn endpoint_stage(pair: &ImexGlmPair, tr: &Trajectory) -> Result<Sampled> {
    let i = pair
        .endpoint_stage()
        .ok_or_else(|| GlmError::Precondition("self-refined reference needs a stage with c = 1".into()))?;
    let st = tr
        .last_stages
        .as_ref()
        .ok_or_else(|| GlmError::Precondition("no step was taken".into()))?;
    let (x, z) = st.stage(i);
    Ok(Sampled { x, z, full: None })
}

/// Derivative data at the final time, from which the target external
/// state of every rung is assembled.
enum Target {
    Additive(AdditiveDerivatives),
    Component(ComponentDerivatives),
}

impl Target {
    fn exact(pair: &ImexGlmPair, problem: &PartitionedProblem, t: f64) -> Option<Self> {
        let p = pair.p();
        match problem {
            PartitionedProblem::Additive(a) => exact_additive_derivatives(a, t, p).map(Target::Additive),
            PartitionedProblem::Singular(s) => exact_component_derivatives(s, t, p).map(Target::Component),
        }
    }

    /// Chain-rule derivatives at `t` through the reference values `(x, z)`.
    fn refined(pair: &ImexGlmPair, problem: &PartitionedProblem, reference: &Sampled, t: f64, h: f64, opts: &StudyOptions) -> Result<Self> {
        let p = pair.p();
        match problem {
            PartitionedProblem::Additive(a) => {
                let mut a = a.clone();
                a.t0 = t;
                a.y0 = reference.x.clone();
                a.exact = None;
                a.split_derivatives = None;
                Ok(Target::Additive(additive_derivatives(&a, p, h, opts.start)?))
            }
            PartitionedProblem::Singular(s) => {
                let mut s = s.clone();
                s.t0 = t;
                s.x0 = reference.x.clone();
                s.z0 = reference.z.clone().expect("component stages carry z");
                s.exact = None;
                s.derivatives = None;
                Ok(Target::Component(component_derivatives(&s, p, h, opts.start)?))
            }
        }
    }

    fn external(&self, pair: &ImexGlmPair, t: f64, h: f64) -> Sampled {
        match self {
            Target::Additive(d) => external_blocks(pair, &ExternalState::additive(nordsieck_additive(pair, d, h), t, h)),
            Target::Component(d) => {
                let (x, z): (DMatrix<f64>, DMatrix<f64>) = nordsieck_component(pair, d, h);
                external_blocks(pair, &ExternalState::component(x, z, t, h))
            }
        }
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Theoretical orders for `(x or y, z)`.
fn theoretical(pair: &ImexGlmPair, problem: &PartitionedProblem) -> Result<(f64, Option<f64>)> {
    let p = pair.p() as f64;
    Ok(match problem.mode() {
        ProblemMode::Additive => (p, None),
        ProblemMode::Component => (p, Some(p)),
        ProblemMode::Dae => (p, Some(crate::dae::stiff_order(pair)? as f64)),
    })
}

/// Runs `pair` at `h_k = h0 2^{-k}`, `k = 0..rungs`, and fits the error
/// decay of the solution block(s) at `t_final`.
pub fn run_convergence_study(
    pair: &ImexGlmPair,
    problem: &PartitionedProblem,
    h0: f64,
    rungs: usize,
    t_final: f64,
    opts: &StudyOptions,
) -> Result<ConvergenceReport> {
    if rungs < 4 {
        return Err(GlmError::TooFewRungs(rungs));
    }
    if !(h0 > 0.0 && h0.is_finite()) {
        return Err(GlmError::param("h0", "must be positive and finite"));
    }
    let hs: Vec<f64> = (0..rungs).map(|k| h0 * 2f64.powi(-(k as i32))).collect();
    for &h in &hs {
        crate::stepper::step_count(problem.t0(), t_final, h)?;
    }
    let (theoretical_x, theoretical_z) = theoretical(pair, problem)?;

    let exact_target = Target::exact(pair, problem, t_final);
    let reference_kind = if exact_target.is_some() {
        ReferenceKind::Exact
    } else {
        ReferenceKind::SelfRefined
    };
    // The reference run goes first in the parallel batch when needed.
    let mut batch: Vec<f64> = hs.clone();
    if reference_kind == ReferenceKind::SelfRefined {
        pair.endpoint_stage()
            .ok_or_else(|| GlmError::Precondition("self-refined reference needs a stage with c = 1".into()))?;
        batch.push(hs[rungs - 1] / opts.refine.max(2) as f64);
    }
    let results = par_map(&batch, |_, &h| run(pair, problem, h, t_final, opts));
    let mut trajectories = Vec::with_capacity(batch.len());
    for (rung, (res, &h)) in results.into_iter().zip(&batch).enumerate() {
        trajectories.push(res.map_err(|e| GlmError::Rung {
            rung,
            h,
            source: Box::new(e),
        })?);
    }

    let mut ladder = Vec::with_capacity(rungs);
    let mut scale_x = 0.0_f64;
    let mut scale_z = 0.0_f64;
    let target = match exact_target {
        Some(t) => t,
        None => {
            let reference = endpoint_stage(pair, &trajectories[rungs])?;
            Target::refined(pair, problem, &reference, t_final, hs[0], opts)?
        }
    };
    for (k, &h) in hs.iter().enumerate() {
        let tr = &trajectories[k];
        let ours = external_blocks(pair, tr.last());
        let target = target.external(pair, t_final, h);
        scale_x = scale_x.max(target.x.amax());
        let error_x = (&ours.x - &target.x).amax();
        let error_z = match (&ours.z, &target.z) {
            (Some(a), Some(b)) => {
                scale_z = scale_z.max(b.amax());
                (a - b).amax()
            }
            _ => f64::NAN,
        };
        let error_full = match (&ours.full, &target.full) {
            (Some(a), Some(b)) => max_diff(a, b),
            _ => f64::NAN,
        };
        for (v, name) in [(error_x, "error_x"), (error_z, "error_z")] {
            if v.is_infinite() {
                return Err(GlmError::Rung {
                    rung: k,
                    h,
                    source: Box::new(GlmError::NonFinite { field: name.into() }),
                });
            }
        }
        ladder.push(RungResult {
            h,
            n_steps: tr.last().n,
            error_x,
            error_z,
            error_full,
            newton_avg: tr.newton_avg(),
            newton_max: tr.newton_max,
        });
    }

    let tolerance = opts
        .tolerance
        .unwrap_or(if problem.is_linear() { 0.2 } else { 0.3 });
    let ex: Vec<f64> = ladder.iter().map(|r| r.error_x).collect();
    let fit_x = fit_order(&hs, &ex, FLOOR_FACTOR * UNIT_ROUNDOFF * scale_x)?;
    let fit_z = match theoretical_z {
        Some(_) => {
            let ez: Vec<f64> = ladder.iter().map(|r| r.error_z).collect();
            Some(fit_order(&hs, &ez, FLOOR_FACTOR * UNIT_ROUNDOFF * scale_z)?)
        }
        None => None,
    };
    let pass_x = fit_x.within(theoretical_x, tolerance);
    let pass_z = match (&fit_z, theoretical_z) {
        (Some(f), Some(t)) => f.within(t, tolerance),
        _ => true,
    };
    Ok(ConvergenceReport {
        pair: pair.name.clone(),
        problem: problem.name().to_string(),
        mode: problem.mode(),
        ladder,
        fit_x,
        fit_z,
        theoretical_x,
        theoretical_z,
        tolerance,
        pass_x,
        pass_z,
        pass: pass_x && pass_z,
        reference_kind,
    })
}

fn fmt_order(f: &OrderFit) -> String {
    if f.degenerate {
        "degenerate".into()
    } else {
        format!("{:.2}", f.order)
    }
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,error_x,error_z,n_steps,newton_avg\n");
        for r in &self.ladder {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_float(r.h),
                fmt_float(r.error_x),
                fmt_float(r.error_z),
                r.n_steps,
                fmt_float(r.newton_avg)
            ));
        }
        out
    }

    /// One line `fitted order x: .., z: .., PASS|FAIL`.
    pub fn summary_line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        match &self.fit_z {
            Some(z) => format!("fitted order x: {}, z: {}, {verdict}", fmt_order(&self.fit_x), fmt_order(z)),
            None => format!("fitted order y: {}, {verdict}", fmt_order(&self.fit_x)),
        }
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "pair {} on {} ({}), reference {}\n",
            self.pair,
            self.problem,
            self.mode.as_str(),
            self.reference_kind.as_str()
        );
        out.push_str(&format!(
            "{:>12} {:>8} {:>12} {:>12} {:>12} {:>8}\n",
            "h", "steps", "error_x", "error_z", "full", "newton"
        ));
        for r in &self.ladder {
            out.push_str(&format!(
                "{:>12.4e} {:>8} {:>12.4e} {:>12.4e} {:>12.4e} {:>8.2}\n",
                r.h, r.n_steps, r.error_x, r.error_z, r.error_full, r.newton_avg
            ));
        }
        let z = self
            .theoretical_z
            .map(|t| format!(", z {t}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "expected order x {}{z} (tolerance {})\n",
            self.theoretical_x, self.tolerance
        ));
        if self.fit_x.floor_proximity || self.fit_z.as_ref().is_some_and(|f| f.floor_proximity) {
            out.push_str("note: errors near the roundoff floor\n");
        }
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }
}
