use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use super::{AdditiveProblem, PairJacobian, PartitionedProblem, SingularProblem, StiffSplit};
use crate::error::{GlmError, Result};

/// Named numeric problem parameters, e.g. `eps=1e-5`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    values: BTreeMap<String, f64>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.into(), value);
        self
    }

    pub fn set(&mut self, key: &str, value: f64) {
        self.values.insert(key.into(), value);
    }

    /// Parses `key=value`.
    pub fn set_assignment(&mut self, text: &str) -> Result<()> {
        let (k, v) = text
            .split_once('=')
            .ok_or_else(|| GlmError::param(text, "expected key=value"))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| GlmError::param(k.trim(), format!("`{v}` is not a number")))?;
        self.set(k.trim(), v);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    fn check_known(&self, allowed: &[&str]) -> Result<()> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(GlmError::param(
                k.as_str(),
                format!("not a parameter of this problem (expected one of: {})", allowed.join(", ")),
            )),
            None => Ok(()),
        }
    }

    fn finite(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.get(key).unwrap_or(default);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(GlmError::param(key, "must be finite"))
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.finite(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(GlmError::param(key, "must be positive"))
        }
    }

    fn eps(&self, default: f64, max: f64) -> Result<f64> {
        let v = self.finite("eps", default)?;
        if !(0.0..=max).contains(&v) {
            return Err(GlmError::param("eps", format!("must lie in [0, {max}]")));
        }
        Ok(v)
    }
}

/// Names and one-line descriptions of the built-in problems.
pub fn catalog() -> &'static [(&'static str, &'static str)] {
    &[
        ("split-dahlquist", "y' = lambda_e y + lambda_i y (additive, linear)"),
        ("nonlinear-additive", "y' = f^E(y) + J y + r(y) with a stiff linear part (additive)"),
        ("kaps", "x' = z - x - x^2, eps z' = x^2 - (1 + 2 eps) z (component; eps = 0 is the DAE)"),
        ("vdp-spp", "x' = z, eps z' = (1 - x^2) z - x (component)"),
        ("linear-spp", "x' = z - 2x, eps z' = x - z (component, linear)"),
        ("linear-dae", "x' = z, 0 = -(z + x) (index-1 DAE)"),
    ]
}

/// Builds a catalogue problem. Unknown names and parameters are rejected.
pub fn builtin(name: &str, params: &Params) -> Result<PartitionedProblem> {
    match name {
        "split-dahlquist" => split_dahlquist(params).map(PartitionedProblem::Additive),
        "nonlinear-additive" => nonlinear_additive(params).map(PartitionedProblem::Additive),
        "kaps" => kaps(params).map(PartitionedProblem::Singular),
        "vdp-spp" => vdp_spp(params).map(PartitionedProblem::Singular),
        "linear-spp" => linear_spp(params).map(PartitionedProblem::Singular),
        "linear-dae" => linear_dae(params).map(PartitionedProblem::Singular),
        _ => Err(GlmError::UnknownProblem(name.into())),
    }
}

fn constant(m: DMatrix<f64>) -> PairJacobian {
    Arc::new(move |_, _| m.clone())
}

fn split_dahlquist(p: &Params) -> Result<AdditiveProblem> {
    p.check_known(&["lambda_e", "lambda_i", "y0", "t_final"])?;
    let le = p.finite("lambda_e", -1.0)?;
    let li = p.finite("lambda_i", -10.0)?;
    if li > 0.0 {
        return Err(GlmError::param("lambda_i", "stiff eigenvalue must be non-positive"));
    }
    let y0 = p.finite("y0", 1.0)?;
    let t_final = p.positive("t_final", 1.0)?;
    let mut prob = AdditiveProblem::linear("split-dahlquist", dmatrix![le], dmatrix![li], dvector![y0], t_final);
    prob.stiff_split = Some(StiffSplit {
        lipschitz_explicit: Some(le.abs()),
        lipschitz_remainder: Some(0.0),
        ..StiffSplit::new(dmatrix![li], Arc::new(|_| DVector::zeros(1)))?
    });
    Ok(prob)
}

/// Exact solution `a = b = a0 / (1 + a0 t)`; the stiff mode `b - a` decays
/// at rate `lambda` and is never excited.
fn nonlinear_additive(p: &Params) -> Result<AdditiveProblem> {
    p.check_known(&["lambda", "a0", "t_final"])?;
    let lam = p.finite("lambda", -1e4)?;
    if lam > 0.0 {
        return Err(GlmError::param("lambda", "must be non-positive"));
    }
    let a0 = p.positive("a0", 1.0)?;
    let t_final = p.positive("t_final", 1.0)?;
    let j = dmatrix![0.0, 0.0; -lam, lam];
    let sol = move |t: f64| a0 / (1.0 + a0 * t);
    let fe: super::Field = Arc::new(|y| {
        let (a, b) = (y[0], y[1]);
        dvector![-a * b, -a * b - a.sin()]
    });
    let jc = j.clone();
    let fi: super::Field = Arc::new(move |y| &jc * y + dvector![0.0, y[0].sin()]);
    let jac_e: super::FieldJacobian = Arc::new(|y| {
        let (a, b) = (y[0], y[1]);
        dmatrix![-b, -a; -b - a.cos(), -a]
    });
    let lip_e = (0..10)
        .map(|k| {
            let a = sol(t_final * k as f64 / 9.0);
            jac_e(&dvector![a, a]).norm()
        })
        .fold(0.0_f64, f64::max);
    let mut split = StiffSplit::new(j, Arc::new(|y| dvector![0.0, y[0].sin()]))?;
    split.lipschitz_explicit = Some(lip_e);
    split.lipschitz_remainder = Some(1.0);
    Ok(AdditiveProblem {
        name: "nonlinear-additive".into(),
        t0: 0.0,
        y0: dvector![a0, a0],
        t_final,
        fe,
        fi,
        jac_i: Arc::new(move |y| dmatrix![0.0, 0.0; -lam + y[0].cos(), lam]),
        jac_e: Some(jac_e),
        exact: Some(Arc::new(move |t| {
            let a = sol(t);
            dvector![a, a]
        })),
        split_derivatives: Some(Arc::new(move |k, t| {
            let a = sol(t);
            match k {
                0 => Some((dvector![-a * a, -a * a - a.sin()], dvector![0.0, a.sin()])),
                1 => {
                    let c = 2.0 * a * a * a;
                    Some((dvector![c, c + a * a * a.cos()], dvector![0.0, -a * a * a.cos()]))
                }
                _ => None,
            }
        })),
        stiff_split: Some(split),
        linear: false,
    })
}

fn kaps(p: &Params) -> Result<SingularProblem> {
    p.check_known(&["eps", "t_final"])?;
    let eps = p.eps(1e-5, 1.0)?;
    let t_final = p.positive("t_final", 1.0)?;
    let k = 1.0 + 2.0 * eps;
    Ok(SingularProblem {
        name: "kaps".into(),
        eps,
        t0: 0.0,
        x0: dvector![1.0],
        z0: dvector![1.0],
        t_final,
        f: Arc::new(|x, z| dvector![z[0] - x[0] - x[0] * x[0]]),
        g: Arc::new(move |x, z| dvector![x[0] * x[0] - k * z[0]]),
        f_x: Arc::new(|x, _| dmatrix![-1.0 - 2.0 * x[0]]),
        f_z: constant(dmatrix![1.0]),
        g_x: Arc::new(|x, _| dmatrix![2.0 * x[0]]),
        g_z: constant(dmatrix![-k]),
        exact: Some(Arc::new(|t| (dvector![(-t).exp()], dvector![(-2.0 * t).exp()]))),
        derivatives: Some(Arc::new(|k, t| {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            Some((dvector![s * (-t).exp()], dvector![s * 2f64.powi(k as i32) * (-2.0 * t).exp()]))
        })),
        linear: false,
    })
}

/// Liénard form of van der Pol on the attracting branch `x > 1`. Starting
/// data are relaxed onto the smooth solution by a short fine-step warm-up.
fn vdp_spp(p: &Params) -> Result<SingularProblem> {
    p.check_known(&["eps", "x0", "t_final"])?;
    let eps = p.eps(1e-6, 1e-2)?;
    let x_start = p.finite("x0", 2.0)?;
    if x_start < 2f64.sqrt() {
        return Err(GlmError::param("x0", "must be at least sqrt(2) so that g_z <= -1"));
    }
    let t_final = p.positive("t_final", 0.5)?;
    let g = |x: &DVector<f64>, z: &DVector<f64>| dvector![(1.0 - x[0] * x[0]) * z[0] - x[0]];
    let mut x0 = dvector![x_start];
    let mut z0 = dvector![x_start / (1.0 - x_start * x_start)];
    if eps > 0.0 {
        let window = 10.0 * eps * (1.0 / eps).ln().max(1.0);
        let steps = (window / (0.1 * eps)).ceil() as usize;
        let hm = window / steps as f64;
        let rhs = |y: &DVector<f64>| {
            let (x, z) = (dvector![y[0]], dvector![y[1]]);
            dvector![z[0], g(&x, &z)[0] / eps]
        };
        let mut y = dvector![x0[0], z0[0]];
        for _ in 0..steps {
            y = crate::starting::rk4_step(&rhs, &y, hm);
        }
        x0 = dvector![y[0]];
        z0 = dvector![y[1]];
    }
    Ok(SingularProblem {
        name: "vdp-spp".into(),
        eps,
        t0: 0.0,
        x0,
        z0,
        t_final,
        f: Arc::new(|_, z| z.clone()),
        g: Arc::new(g),
        f_x: constant(dmatrix![0.0]),
        f_z: constant(dmatrix![1.0]),
        g_x: Arc::new(|x, z| dmatrix![-2.0 * x[0] * z[0] - 1.0]),
        g_z: Arc::new(|x, _| dmatrix![1.0 - x[0] * x[0]]),
        exact: None,
        derivatives: None,
        linear: false,
    })
}

/// Smooth solution `x = x0 e^{λt}`, `z = κ x` with `ε κ² + (1 - 2ε) κ - 1 = 0`.
fn linear_spp(p: &Params) -> Result<SingularProblem> {
    p.check_known(&["eps", "x0", "t_final"])?;
    let eps = p.eps(1e-4, 1.0)?;
    let x_start = p.finite("x0", 1.0)?;
    let t_final = p.positive("t_final", 1.0)?;
    let b = 1.0 - 2.0 * eps;
    let kappa = 2.0 / (b + (b * b + 4.0 * eps).sqrt());
    let lam = kappa - 2.0;
    Ok(SingularProblem {
        name: "linear-spp".into(),
        eps,
        t0: 0.0,
        x0: dvector![x_start],
        z0: dvector![kappa * x_start],
        t_final,
        f: Arc::new(|x, z| dvector![z[0] - 2.0 * x[0]]),
        g: Arc::new(|x, z| dvector![x[0] - z[0]]),
        f_x: constant(dmatrix![-2.0]),
        f_z: constant(dmatrix![1.0]),
        g_x: constant(dmatrix![1.0]),
        g_z: constant(dmatrix![-1.0]),
        exact: Some(Arc::new(move |t| {
            let x = x_start * (lam * t).exp();
            (dvector![x], dvector![kappa * x])
        })),
        derivatives: Some(Arc::new(move |k, t| {
            let x = x_start * (lam * t).exp() * lam.powi(k as i32);
            Some((dvector![x], dvector![kappa * x]))
        })),
        linear: true,
    })
}

fn linear_dae(p: &Params) -> Result<SingularProblem> {
    p.check_known(&["eps", "x0", "t_final"])?;
    if p.get("eps").is_some_and(|e| e != 0.0) {
        return Err(GlmError::param("eps", "linear-dae is a pure DAE; eps must be 0"));
    }
    let x_start = p.finite("x0", 1.0)?;
    let t_final = p.positive("t_final", 1.0)?;
    Ok(SingularProblem {
        name: "linear-dae".into(),
        eps: 0.0,
        t0: 0.0,
        x0: dvector![x_start],
        z0: dvector![-x_start],
        t_final,
        f: Arc::new(|_, z| z.clone()),
        g: Arc::new(|x, z| -(z + x)),
        f_x: constant(dmatrix![0.0]),
        f_z: constant(dmatrix![1.0]),
        g_x: constant(dmatrix![-1.0]),
        g_z: constant(dmatrix![-1.0]),
        exact: Some(Arc::new(move |t| {
            let x = x_start * (-t).exp();
            (dvector![x], dvector![-x])
        })),
        derivatives: Some(Arc::new(move |k, t| {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            let x = s * x_start * (-t).exp();
            Some((dvector![x], dvector![-x]))
        })),
        linear: true,
    })
}
