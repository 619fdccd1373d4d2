use super::convergence::{run_convergence_study, ConvergenceReport, StudyOptions};
use super::fit::{FLOOR_FACTOR, UNIT_ROUNDOFF};
use super::{fmt_float, par_map};
use crate::error::{GlmError, Result};
use crate::problems::PartitionedProblem;
use crate::starting::{exact_additive_derivatives, exact_component_derivatives, nordsieck_additive, nordsieck_component, start};
use crate::stepper::{integrate, ExternalData};
use crate::tableau::ImexGlmPair;

/// Stiffness at which the error ratio criterion applies: `|h λ| >= 10`.
const STIFF_THRESHOLD: f64 = 10.0;
const MAX_RATIO: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessRow {
    pub lambda: f64,
    pub h_lambda: f64,
    /// Error clamped from below at the roundoff floor; infinite on failure.
    pub error: f64,
    pub raw_error: f64,
    pub n_steps: usize,
    pub newton_avg: f64,
    /// Instability or solver failure of this run.
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StiffnessSweep {
    pub h: f64,
    pub rows: Vec<StiffnessRow>,
    /// `max/min` of the clamped errors over the rows with `|h λ| >= 10`.
    pub ratio: f64,
    pub pass: bool,
}

fn solution_error(pair: &ImexGlmPair, problem: &PartitionedProblem, data: &ExternalData, t: f64, h: f64) -> Result<(f64, f64)> {
    let p = pair.p();
    let (bx, bz) = pair.solution_blocks();
    let missing = || GlmError::Precondition(format!("problem `{}` has no exact derivative data", problem.name()));
    match (problem, data) {
        (PartitionedProblem::Additive(a), ExternalData::Additive { y }) => {
            let d = exact_additive_derivatives(a, t, p).ok_or_else(missing)?;
            let exact = nordsieck_additive(pair, &d, h);
            let scale = exact.column(bx).amax().max(a.y0.amax());
            Ok(((y.column(bx) - exact.column(bx)).amax(), scale))
        }
        (PartitionedProblem::Singular(s), ExternalData::Component { x, z }) => {
            let d = exact_component_derivatives(s, t, p).ok_or_else(missing)?;
            let (ex, ez) = nordsieck_component(pair, &d, h);
            let err = (x.column(bx) - ex.column(bx)).amax().max((z.column(bz) - ez.column(bz)).amax());
            let scale = ex.column(bx).amax().max(ez.column(bz).amax()).max(s.x0.amax()).max(s.z0.amax());
            Ok((err, scale))
        }
        _ => Err(GlmError::Incompatible("state does not match the problem".into())),
    }
}

/// Errors at fixed `h` across the stiffness values of a problem family.
///
/// Errors are clamped from below at `100 u` times the larger of the initial
/// and final solution magnitudes, so that runs resolving a decayed solution
/// to roundoff compare as equal. Instability and
/// solver failures are recorded per row; usage errors propagate.
pub fn stiffness_sweep<F>(
    pair: &ImexGlmPair,
    family: F,
    values: &[f64],
    h: f64,
    opts: &StudyOptions,
) -> Result<StiffnessSweep>
where
    F: Fn(f64) -> Result<PartitionedProblem> + Sync,
{
    if values.is_empty() {
        return Err(GlmError::Precondition("no stiffness values".into()));
    }
    let problems: Vec<PartitionedProblem> = values.iter().map(|&l| family(l)).collect::<Result<_>>()?;
    let rows = par_map(&problems, |i, problem| -> Result<StiffnessRow> {
        let lambda = values[i];
        let t_final = problem.t_final();
        let s0 = start(pair, problem, h, opts.start)?;
        let mut row = StiffnessRow {
            lambda,
            h_lambda: (h * lambda).abs(),
            error: f64::INFINITY,
            raw_error: f64::INFINITY,
            n_steps: 0,
            newton_avg: 0.0,
            failure: None,
        };
        match integrate(pair, problem, s0, t_final, &opts.newton, usize::MAX) {
            Ok(tr) => {
                let last = tr.last();
                let (err, scale) = solution_error(pair, problem, &last.data, last.t, h)?;
                row.raw_error = err;
                row.error = err.max(FLOOR_FACTOR * UNIT_ROUNDOFF * scale.max(f64::MIN_POSITIVE));
                row.n_steps = last.n;
                row.newton_avg = tr.newton_avg();
            }
            Err(e) if e.is_usage() => return Err(e),
            Err(e) => row.failure = Some(e.to_string()),
        }
        Ok(row)
    });
    let rows: Vec<StiffnessRow> = rows.into_iter().collect::<Result<_>>()?;
    let stiff: Vec<&StiffnessRow> = rows.iter().filter(|r| r.h_lambda >= STIFF_THRESHOLD).collect();
    let (ratio, pass) = if stiff.is_empty() {
        (f64::NAN, false)
    } else if stiff.iter().any(|r| r.failure.is_some() || !r.error.is_finite()) {
        (f64::INFINITY, false)
    } else {
        let max = stiff.iter().map(|r| r.error).fold(0.0, f64::max);
        let min = stiff.iter().map(|r| r.error).fold(f64::INFINITY, f64::min);
        let ratio = max / min;
        (ratio, ratio <= MAX_RATIO)
    };
    Ok(StiffnessSweep { h, rows, ratio, pass })
}

impl StiffnessSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,h,error_x,error_z,n_steps,newton_avg\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_float(r.lambda),
                fmt_float(self.h),
                fmt_float(r.error),
                fmt_float(f64::NAN),
                r.n_steps,
                fmt_float(r.newton_avg)
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("stiffness sweep at h = {}\n", self.h);
        out.push_str(&format!("{:>12} {:>12} {:>12} {:>8}  status\n", "lambda", "|h lambda|", "error", "newton"));
        for r in &self.rows {
            let status = r.failure.as_deref().unwrap_or("ok");
            out.push_str(&format!(
                "{:>12.4e} {:>12.4e} {:>12.4e} {:>8.2}  {status}\n",
                r.lambda, r.h_lambda, r.error, r.newton_avg
            ));
        }
        out.push_str(&format!(
            "error ratio over |h lambda| >= 10: {:.3}, {}\n",
            self.ratio,
            if self.pass { "PASS" } else { "FAIL" }
        ));
        out
    }
}

#[derive(Debug, Clone)]
pub struct EpsilonRow {
    pub eps: f64,
    pub report: ConvergenceReport,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct EpsilonSweep {
    pub rows: Vec<EpsilonRow>,
    /// Required fitted order for both variables, `p - 0.3`.
    pub threshold: f64,
    pub pass: bool,
}

/// Convergence studies across `ε`; `ε = 0` runs the DAE scheme.
pub fn epsilon_sweep<F>(
    pair: &ImexGlmPair,
    family: F,
    eps_values: &[f64],
    h0: f64,
    rungs: usize,
    t_final: f64,
    d: f64,
    opts: &StudyOptions,
) -> Result<EpsilonSweep>
where
    F: Fn(f64) -> Result<PartitionedProblem>,
{
    if eps_values.is_empty() {
        return Err(GlmError::Precondition("no eps values".into()));
    }
    let h_min = h0 * 2f64.powi(-(rungs.saturating_sub(1) as i32));
    for &eps in eps_values {
        if !(eps >= 0.0) {
            return Err(GlmError::param("eps", format!("{eps} is negative")));
        }
        if eps > d * h_min {
            return Err(GlmError::Precondition(format!(
                "eps = {eps} violates eps <= D h for D = {d} and h = {h_min}"
            )));
        }
    }
    let threshold = pair.p() as f64 - 0.3;
    let mut rows = Vec::with_capacity(eps_values.len());
    for &eps in eps_values {
        let problem = family(eps)?;
        let report = run_convergence_study(pair, &problem, h0, rungs, t_final, opts)?;
        let pass = report.fit_x.at_least(threshold) && report.fit_z.as_ref().is_none_or(|f| f.at_least(threshold));
        rows.push(EpsilonRow { eps, report, pass });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(EpsilonSweep { rows, threshold, pass })
}

impl EpsilonSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,h,error_x,error_z,n_steps,newton_avg\n");
        for row in &self.rows {
            for r in &row.report.ladder {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    fmt_float(row.eps),
                    fmt_float(r.h),
                    fmt_float(r.error_x),
                    fmt_float(r.error_z),
                    r.n_steps,
                    fmt_float(r.newton_avg)
                ));
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("eps sweep, required order >= {:.1}\n", self.threshold);
        for row in &self.rows {
            out.push_str(&format!("eps = {:.1e}: {}\n", row.eps, row.report.summary_line()));
        }
        out.push_str(if self.pass { "PASS\n" } else { "FAIL\n" });
        out
    }
}
