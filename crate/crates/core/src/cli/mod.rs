//! The `glm` command line. Exit codes: 0 pass, 1 numerical or acceptance
//! failure, 2 usage or parse error.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::analysis::{
    epsilon_sweep, fmt_float, run_convergence_study, simulate_error_recurrence, stiffness_sweep, Noise,
    RecurrenceSpec, StudyOptions,
};
use crate::error::{GlmError, Result};
use crate::problems::{builtin, catalog, Params, PartitionedProblem};
use crate::starting::{start, StartOptions};
use crate::stepper::{integrate, ExternalData, NewtonConfig};
use crate::tableau::{
    parse_tableau, spectral_radius, spectral_radius_complex, stability_matrix, stability_matrix_at_infinity,
    validate_class_of_interest, ClassTolerances, GlmTableau, ImexGlmPair, ResidualReport,
};

#[derive(Parser, Debug)]
#[command(name = "glm", version, about = "IMEX general linear methods: certification, integration and convergence studies")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check order conditions and class-of-interest properties of a tableau file.
    Validate {
        tableau: PathBuf,
    },
    /// Spectral radii of the stability matrices over a complex grid.
    Stability(StabilityArgs),
    /// Integrate a built-in problem with fixed steps.
    Integrate(IntegrateArgs),
    /// Convergence study on a halving step-size ladder.
    Converge(ConvergeArgs),
    /// Convergence studies across eps for a singularly perturbed problem.
    SweepEps(SweepEpsArgs),
    /// Errors at fixed h across stiffness values.
    SweepStiff(SweepStiffArgs),
    /// Simulate the error accumulation recurrence zeta_n = M zeta_{n-1} + delta_n.
    Recurrence(RecurrenceArgs),
    /// List the built-in problems.
    Problems,
}

#[derive(Args, Debug)]
struct ProblemArgs {
    /// Built-in problem name (see `glm problems`).
    #[arg(long)]
    problem: String,
    /// Problem parameter assignment `name=value`; repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Shorthand for `--param eps=VALUE`.
    #[arg(long, allow_hyphen_values = true)]
    eps: Option<f64>,
}

impl ProblemArgs {
    fn params(&self) -> Result<Params> {
        let mut p = Params::new();
        for a in &self.params {
            p.set_assignment(a)?;
        }
        if let Some(e) = self.eps {
            p.set("eps", e);
        }
        Ok(p)
    }

    fn build(&self) -> Result<PartitionedProblem> {
        builtin(&self.problem, &self.params()?)
    }
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Absolute Newton tolerance.
    #[arg(long, default_value_t = 1e-12)]
    newton_abs: f64,
    /// Relative Newton tolerance.
    #[arg(long, default_value_t = 1e-10)]
    newton_rel: f64,
    /// Newton iteration cap per stage solve.
    #[arg(long, default_value_t = 25)]
    newton_max: usize,
    /// Fail instead of bootstrapping missing starting derivatives.
    #[arg(long)]
    no_bootstrap: bool,
}

impl SolverArgs {
    fn newton(&self) -> NewtonConfig {
        NewtonConfig {
            abs_tol: self.newton_abs,
            rel_tol: self.newton_rel,
            max_iters: self.newton_max,
            ..NewtonConfig::default()
        }
    }

    fn start(&self) -> StartOptions {
        StartOptions {
            allow_bootstrap: !self.no_bootstrap,
        }
    }

    fn study(&self, tolerance: Option<f64>) -> StudyOptions {
        StudyOptions {
            newton: self.newton(),
            start: self.start(),
            tolerance,
            ..StudyOptions::default()
        }
    }
}

#[derive(Args, Debug)]
struct StabilityArgs {
    tableau: PathBuf,
    /// re_min re_max im_min im_max n_re n_im
    #[arg(long, num_args = 6, allow_hyphen_values = true, value_names = ["RE_MIN", "RE_MAX", "IM_MIN", "IM_MAX", "N_RE", "N_IM"],
          default_values = ["-10", "0", "-5", "5", "11", "11"])]
    grid: Vec<String>,
    /// Slab check: rho^I <= alpha for every sampled z with Re z <= -D.
    #[arg(long = "slab", num_args = 2, value_names = ["D", "ALPHA"])]
    slab: Option<Vec<f64>>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IntegrateArgs {
    #[arg(long)]
    method: PathBuf,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    h: f64,
    /// Final time; defaults to the problem's.
    #[arg(long)]
    tf: Option<f64>,
    /// Record every k-th step.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[arg(long)]
    method: PathBuf,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    h0: f64,
    #[arg(long, default_value_t = 5)]
    rungs: usize,
    /// Final time; defaults to the problem's.
    #[arg(long)]
    tf: Option<f64>,
    /// Pass tolerance on the fitted order (default 0.2 linear, 0.3 nonlinear).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct SweepEpsArgs {
    #[arg(long)]
    method: PathBuf,
    #[arg(long)]
    problem: String,
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Comma-separated eps values; 0 selects the DAE scheme.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1e-4, 1e-5, 1e-6])]
    eps_list: Vec<f64>,
    #[arg(long)]
    h0: f64,
    #[arg(long, default_value_t = 5)]
    rungs: usize,
    #[arg(long)]
    tf: Option<f64>,
    /// Constant in the requirement eps <= D h.
    #[arg(long = "d", default_value_t = 1.0)]
    d: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct SweepStiffArgs {
    #[arg(long)]
    method: PathBuf,
    #[arg(long)]
    problem: String,
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Parameter carrying the stiffness (default: lambda_i for
    /// split-dahlquist, lambda otherwise).
    #[arg(long)]
    stiff_param: Option<String>,
    /// Comma-separated stiffness values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    values: Vec<f64>,
    #[arg(long)]
    h: f64,
    /// Replace the implicit component by the explicit one.
    #[arg(long)]
    explicit_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
#[group(id = "noise", multiple = false)]
struct NoiseFlags {
    #[arg(long)]
    constant: bool,
    #[arg(long)]
    smooth: bool,
    #[arg(long)]
    rough: bool,
}

#[derive(Args, Debug)]
struct RecurrenceArgs {
    /// Rows separated by ';', entries by ',' or spaces, e.g. "0.5,1;0,0.5".
    #[arg(long, allow_hyphen_values = true)]
    matrix: String,
    #[arg(long)]
    nu: f64,
    #[command(flatten)]
    noise: NoiseFlags,
    #[arg(long, default_value_t = 1.0)]
    tf: f64,
    /// Finest ladder exponent: h = 2^-4 .. 2^-K.
    #[arg(long, default_value_t = 10)]
    finest: i32,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_pair(path: &Path) -> Result<ImexGlmPair> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    parse_tableau(&text)
}

fn write_csv(path: &Option<PathBuf>, csv: &str) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, csv)?;
    }
    Ok(())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn residual_lines(out: &mut String, label: &str, rep: &ResidualReport, p: usize) {
    let _ = writeln!(out, "{label} component (q = {}):", rep.q);
    let _ = writeln!(out, "  preconsistency |U w0 - 1| = {:.3e}, |V w0 - w0| = {:.3e}", rep.preconsistency_u, rep.preconsistency_v);
    for k in 1..=p {
        let required = if k <= rep.q { "" } else { " (not required)" };
        let _ = writeln!(out, "  stage  k={k}: {:.3e}{required}", rep.stage[k - 1]);
    }
    for k in 1..=p {
        let _ = writeln!(out, "  output k={k}: {:.3e}", rep.output[k - 1]);
    }
}

fn cmd_validate(path: &Path, out: &mut String) -> Result<bool> {
    let pair = load_pair(path)?;
    let rep = validate_class_of_interest(&pair, ClassTolerances::default());
    let _ = writeln!(out, "tableau {} ({}, s = {}, r = {}, p = {})", pair.name, pair.mode.as_str(), pair.s(), pair.r(), pair.p());
    residual_lines(out, "explicit", &rep.explicit_residuals, pair.p());
    residual_lines(out, "implicit", &rep.implicit_residuals, pair.p());
    let eigs: Vec<String> = rep.implicit_a_eigs.iter().map(|e| format!("{:.6}", e.re)).collect();
    let _ = writeln!(out, "internal consistency (c^E = c^I): {}", verdict(rep.internally_consistent));
    let _ = writeln!(
        out,
        "stage orders (effective q^E = {}, q^I = {}): {}",
        rep.effective_q_explicit,
        rep.effective_q_implicit,
        verdict(rep.stage_orders_ok)
    );
    let _ = writeln!(out, "eigenvalues of A^I real positive [{}]: {}", eigs.join(", "), verdict(rep.eigs_positive));
    let _ = writeln!(out, "rho(M^I(inf)) = {:.6} < 1: {}", rep.rho_m_infinity, verdict(rep.rho_lt_one));
    let _ = writeln!(out, "class of interest: {}", verdict(rep.overall));
    Ok(rep.overall)
}

fn rho_at(t: &GlmTableau, z: Complex64) -> f64 {
    stability_matrix(t, z).map(|m| spectral_radius_complex(&m)).unwrap_or(f64::NAN)
}

fn parse_grid(g: &[String]) -> Result<(f64, f64, f64, f64, usize, usize)> {
    let num = |i: usize| -> Result<f64> {
        g[i].parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| GlmError::param("grid", format!("`{}` is not a finite number", g[i])))
    };
    let count = |i: usize| -> Result<usize> {
        g[i].parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| GlmError::param("grid", format!("`{}` is not a positive count", g[i])))
    };
    let (a, b, c, d) = (num(0)?, num(1)?, num(2)?, num(3)?);
    if a > b || c > d {
        return Err(GlmError::param("grid", "minimum exceeds maximum"));
    }
    Ok((a, b, c, d, count(4)?, count(5)?))
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn cmd_stability(a: &StabilityArgs, out: &mut String) -> Result<bool> {
    let pair = load_pair(&a.tableau)?;
    let (re0, re1, im0, im1, nre, nim) = parse_grid(&a.grid)?;
    let mut csv = String::from("re,im,rho_explicit,rho_implicit\n");
    let mut slab_max = f64::NEG_INFINITY;
    let mut slab_points = 0usize;
    let mut singular = 0usize;
    for &re in &axis(re0, re1, nre) {
        for &im in &axis(im0, im1, nim) {
            let z = Complex64::new(re, im);
            let (re_, ri) = (rho_at(&pair.explicit, z), rho_at(&pair.implicit, z));
            if ri.is_nan() {
                singular += 1;
            }
            if let Some(s) = &a.slab {
                if re <= -s[0] {
                    slab_points += 1;
                    slab_max = if ri.is_nan() { f64::INFINITY } else { slab_max.max(ri) };
                }
            }
            let _ = writeln!(csv, "{},{},{},{}", fmt_float(re), fmt_float(im), fmt_float(re_), fmt_float(ri));
        }
    }
    write_csv(&a.out, &csv)?;
    let rho_inf = stability_matrix_at_infinity(&pair.implicit)
        .map(|m| spectral_radius(&m))
        .unwrap_or(f64::NAN);
    let _ = writeln!(out, "tableau {}: {} grid points, {} singular", pair.name, nre * nim, singular);
    let _ = writeln!(out, "rho(M^I(inf)) = {}", fmt_float(rho_inf));
    if a.out.is_none() {
        out.push_str(&csv);
    }
    let Some(s) = &a.slab else {
        return Ok(true);
    };
    let (d, alpha) = (s[0], s[1]);
    if !(alpha < 1.0) {
        return Err(GlmError::param("slab", "alpha must be below 1"));
    }
    let pass = slab_points > 0 && slab_max <= alpha;
    let _ = writeln!(
        out,
        "slab Re z <= -{d}: {slab_points} points, max rho^I = {slab_max:.6} <= {alpha}: {}",
        verdict(pass)
    );
    Ok(pass)
}

fn cmd_integrate(a: &IntegrateArgs, out: &mut String) -> Result<bool> {
    let pair = load_pair(&a.method)?;
    let problem = a.problem.build()?;
    if !(a.h > 0.0 && a.h.is_finite()) {
        return Err(GlmError::param("h", "must be positive and finite"));
    }
    let tf = a.tf.unwrap_or(problem.t_final());
    crate::stepper::step_count(problem.t0(), tf, a.h)?;
    let s0 = start(&pair, &problem, a.h, a.solver.start())?;
    let tr = integrate(&pair, &problem, s0, tf, &a.solver.newton(), a.stride)?;
    let mut csv = String::from("t,n");
    let first = &tr.states[0];
    let (nx, nz) = match &first.data {
        ExternalData::Additive { y } => (y.nrows(), 0),
        ExternalData::Component { x, z } => (x.nrows(), z.nrows()),
    };
    let var = if nz == 0 { "y" } else { "x" };
    for i in 0..nx {
        let _ = write!(csv, ",{var}{i}");
    }
    for i in 0..nz {
        let _ = write!(csv, ",z{i}");
    }
    csv.push('\n');
    for s in &tr.states {
        let _ = write!(csv, "{},{}", fmt_float(s.t), s.n);
        let cols: Vec<f64> = match &s.data {
            ExternalData::Additive { y } => y.column(0).iter().copied().collect(),
            ExternalData::Component { x, z } => x.column(0).iter().chain(z.column(0).iter()).copied().collect(),
        };
        for v in cols {
            let _ = write!(csv, ",{}", fmt_float(v));
        }
        csv.push('\n');
    }
    write_csv(&a.out, &csv)?;
    let last = tr.last();
    let _ = writeln!(
        out,
        "{} on {} ({}): {} steps of h = {} to t = {}, newton avg {:.2}, max {}",
        pair.name,
        problem.name(),
        problem.mode().as_str(),
        last.n,
        a.h,
        last.t,
        tr.newton_avg(),
        tr.newton_max
    );
    if a.out.is_none() {
        out.push_str(&csv);
    }
    Ok(true)
}

fn cmd_converge(a: &ConvergeArgs, out: &mut String) -> Result<bool> {
    let pair = load_pair(&a.method)?;
    let problem = a.problem.build()?;
    let tf = a.tf.unwrap_or(problem.t_final());
    let rep = run_convergence_study(&pair, &problem, a.h0, a.rungs, tf, &a.solver.study(a.tol))?;
    write_csv(&a.out, &rep.to_csv())?;
    out.push_str(&rep.summary());
    Ok(rep.pass)
}

fn cmd_sweep_eps(a: &SweepEpsArgs, out: &mut String) -> Result<bool> {
    let pair = load_pair(&a.method)?;
    let mut base = Params::new();
    for p in &a.params {
        base.set_assignment(p)?;
    }
    let probe = builtin(&a.problem, &base)?;
    let tf = a.tf.unwrap_or(probe.t_final());
    let family = |eps: f64| builtin(&a.problem, &base.clone().with("eps", eps));
    let sweep = epsilon_sweep(&pair, family, &a.eps_list, a.h0, a.rungs, tf, a.d, &a.solver.study(None))?;
    write_csv(&a.out, &sweep.to_csv())?;
    out.push_str(&sweep.summary());
    Ok(sweep.pass)
}

fn cmd_sweep_stiff(a: &SweepStiffArgs, out: &mut String) -> Result<bool> {
    let mut pair = load_pair(&a.method)?;
    if a.explicit_only {
        pair = pair.explicit_only();
    }
    let mut base = Params::new();
    for p in &a.params {
        base.set_assignment(p)?;
    }
    let key = a.stiff_param.clone().unwrap_or_else(|| {
        if a.problem == "split-dahlquist" {
            "lambda_i".into()
        } else {
            "lambda".into()
        }
    });
    let family = |v: f64| builtin(&a.problem, &base.clone().with(&key, v));
    let sweep = stiffness_sweep(&pair, family, &a.values, a.h, &a.solver.study(None))?;
    write_csv(&a.out, &sweep.to_csv())?;
    out.push_str(&sweep.summary());
    Ok(sweep.pass)
}

/// Parses "a,b;c,d" (or whitespace-separated entries) into a matrix.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| GlmError::param("matrix", format!("`{s}` is not a number")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(GlmError::param("matrix", "expected a non-empty square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn cmd_recurrence(a: &RecurrenceArgs, out: &mut String) -> Result<bool> {
    let m = parse_matrix(&a.matrix)?;
    let noise = if a.noise.constant {
        Noise::Constant
    } else if a.noise.rough {
        Noise::Rough
    } else if a.noise.smooth {
        Noise::Smooth
    } else {
        return Err(GlmError::param("noise", "choose one of --constant, --smooth, --rough"));
    };
    if a.finest < 6 {
        return Err(GlmError::param("finest", "must be at least 6"));
    }
    let spec = RecurrenceSpec {
        t_final: a.tf,
        hs: (4..=a.finest).map(|k| 2f64.powi(-k)).collect(),
        seed: a.seed,
        ..RecurrenceSpec::new(m, a.nu, noise)
    };
    let rep = simulate_error_recurrence(&spec)?;
    write_csv(&a.out, &rep.to_csv())?;
    let _ = writeln!(out, "{}", rep.summary_line());
    Ok(rep.pass)
}

fn dispatch(cli: &Cli, out: &mut String) -> Result<bool> {
    match &cli.command {
        Command::Validate { tableau } => cmd_validate(tableau, out),
        Command::Stability(a) => cmd_stability(a, out),
        Command::Integrate(a) => cmd_integrate(a, out),
        Command::Converge(a) => cmd_converge(a, out),
        Command::SweepEps(a) => cmd_sweep_eps(a, out),
        Command::SweepStiff(a) => cmd_sweep_stiff(a, out),
        Command::Recurrence(a) => cmd_recurrence(a, out),
        Command::Problems => {
            for (name, about) in catalog() {
                let _ = writeln!(out, "{name:<20} {about}");
            }
            Ok(true)
        }
    }
}

/// Runs the command line `args` (including the program name), writing the
/// report to `out` and diagnostics to `err`; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let mut report = String::new();
    let result = dispatch(&cli, &mut report);
    let _ = out.write_all(report.as_bytes());
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}
