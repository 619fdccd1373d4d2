//! Test problems: additively split ODEs, singular perturbation problems and
//! index-1 DAEs, plus the well-posedness checks they rely on.

mod builtin;

pub use builtin::{builtin, catalog, Params};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{GlmError, Result};

pub type Field = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type FieldJacobian = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type PairField = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type PairJacobian = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// `(k, t) -> (a^{(k)}(t), b^{(k)}(t))`, or `None` when order `k` is not available.
pub type DerivativePair = Arc<dyn Fn(usize, f64) -> Option<(DVector<f64>, DVector<f64>)> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemMode {
    Additive,
    Component,
    Dae,
}

impl ProblemMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemMode::Additive => "additive",
            ProblemMode::Component => "component",
            ProblemMode::Dae => "dae",
        }
    }
}

/// `y' = f^E(y) + f^I(y)`.
#[derive(Clone)]
pub struct AdditiveProblem {
    pub name: String,
    pub t0: f64,
    pub y0: DVector<f64>,
    pub t_final: f64,
    pub fe: Field,
    pub fi: Field,
    pub jac_i: FieldJacobian,
    /// Used by the dense-stage Newton solver and the chain-rule start when present.
    pub jac_e: Option<FieldJacobian>,
    pub exact: Option<Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>>,
    /// Time derivatives of `f^E` and `f^I` along the exact solution.
    pub split_derivatives: Option<DerivativePair>,
    pub stiff_split: Option<StiffSplit>,
    pub linear: bool,
}

/// `x' = f(x, z)`, `ε z' = g(x, z)`; `ε = 0` is the index-1 DAE.
#[derive(Clone)]
pub struct SingularProblem {
    pub name: String,
    pub eps: f64,
    pub t0: f64,
    pub x0: DVector<f64>,
    pub z0: DVector<f64>,
    pub t_final: f64,
    pub f: PairField,
    pub g: PairField,
    pub f_x: PairJacobian,
    pub f_z: PairJacobian,
    pub g_x: PairJacobian,
    pub g_z: PairJacobian,
    pub exact: Option<Arc<dyn Fn(f64) -> (DVector<f64>, DVector<f64>) + Send + Sync>>,
    /// Time derivatives of `x` and `z` along the exact solution.
    pub derivatives: Option<DerivativePair>,
    pub linear: bool,
}

#[derive(Clone)]
pub enum PartitionedProblem {
    Additive(AdditiveProblem),
    Singular(SingularProblem),
}

impl std::fmt::Debug for AdditiveProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdditiveProblem")
            .field("name", &self.name)
            .field("m", &self.m())
            .field("t0", &self.t0)
            .field("t_final", &self.t_final)
            .finish_non_exhaustive()
    }
}

impl std::fmt::Debug for SingularProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SingularProblem")
            .field("name", &self.name)
            .field("eps", &self.eps)
            .field("mx", &self.mx())
            .field("mz", &self.mz())
            .finish_non_exhaustive()
    }
}

impl std::fmt::Debug for PartitionedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartitionedProblem::Additive(p) => p.fmt(f),
            PartitionedProblem::Singular(p) => p.fmt(f),
        }
    }
}

fn zero_field(m: usize) -> Field {
    Arc::new(move |_| DVector::zeros(m))
}

impl AdditiveProblem {
    pub fn m(&self) -> usize {
        self.y0.len()
    }

    /// `y' = J_E y + J_I y` with the exact solution `exp((J_E + J_I) t) y0`.
    pub fn linear(name: &str, je: DMatrix<f64>, ji: DMatrix<f64>, y0: DVector<f64>, t_final: f64) -> Self {
        let jsum = &je + &ji;
        let (je1, ji1, je2, ji2) = (je.clone(), ji.clone(), je.clone(), ji.clone());
        let (js1, js2) = (jsum.clone(), jsum.clone());
        let y0c = y0.clone();
        AdditiveProblem {
            name: name.into(),
            t0: 0.0,
            y0: y0.clone(),
            t_final,
            fe: Arc::new(move |y| &je1 * y),
            fi: Arc::new(move |y| &ji1 * y),
            jac_i: Arc::new(move |_| ji2.clone()),
            jac_e: Some(Arc::new(move |_| je2.clone())),
            exact: Some(Arc::new(move |t| (&js1 * t).exp() * &y0c)),
            split_derivatives: Some(Arc::new(move |k, t| {
                let y = (&js2 * t).exp() * &y0;
                let mut d = y;
                for _ in 0..k {
                    d = &js2 * d;
                }
                Some((&je * &d, &ji * &d))
            })),
            stiff_split: None,
            linear: true,
        }
    }

    /// The same problem with `f^I` replaced by zero.
    pub fn without_implicit(&self) -> Self {
        let m = self.m();
        let mut p = self.clone();
        p.fi = zero_field(m);
        p.jac_i = Arc::new(move |_| DMatrix::zeros(m, m));
        p.exact = None;
        p.split_derivatives = None;
        p.name = format!("{}-explicit-part", self.name);
        p
    }

    /// The same problem with `f^E` replaced by zero.
    pub fn without_explicit(&self) -> Self {
        let m = self.m();
        let mut p = self.clone();
        p.fe = zero_field(m);
        p.jac_e = Some(Arc::new(move |_| DMatrix::zeros(m, m)));
        p.exact = None;
        p.split_derivatives = None;
        p.name = format!("{}-implicit-part", self.name);
        p
    }
}

impl SingularProblem {
    pub fn mx(&self) -> usize {
        self.x0.len()
    }

    pub fn mz(&self) -> usize {
        self.z0.len()
    }

    pub fn mode(&self) -> ProblemMode {
        if self.eps == 0.0 {
            ProblemMode::Dae
        } else {
            ProblemMode::Component
        }
    }

    /// Counterexample with `g` negated: the constraint manifold is unchanged
    /// but `g_z` changes sign, so the problem is no longer well posed.
    pub fn with_flipped_constraint(&self) -> Self {
        let mut p = self.clone();
        let (g, gx, gz) = (self.g.clone(), self.g_x.clone(), self.g_z.clone());
        p.g = Arc::new(move |x, z| -g(x, z));
        p.g_x = Arc::new(move |x, z| -gx(x, z));
        p.g_z = Arc::new(move |x, z| -gz(x, z));
        if self.eps != 0.0 {
            p.exact = None;
            p.derivatives = None;
        }
        p.name = format!("{}-flipped", self.name);
        p
    }
}

impl PartitionedProblem {
    pub fn name(&self) -> &str {
        match self {
            PartitionedProblem::Additive(p) => &p.name,
            PartitionedProblem::Singular(p) => &p.name,
        }
    }

    pub fn mode(&self) -> ProblemMode {
        match self {
            PartitionedProblem::Additive(_) => ProblemMode::Additive,
            PartitionedProblem::Singular(p) => p.mode(),
        }
    }

    pub fn t0(&self) -> f64 {
        match self {
            PartitionedProblem::Additive(p) => p.t0,
            PartitionedProblem::Singular(p) => p.t0,
        }
    }

    pub fn t_final(&self) -> f64 {
        match self {
            PartitionedProblem::Additive(p) => p.t_final,
            PartitionedProblem::Singular(p) => p.t_final,
        }
    }

    pub fn set_t_final(&mut self, t: f64) {
        match self {
            PartitionedProblem::Additive(p) => p.t_final = t,
            PartitionedProblem::Singular(p) => p.t_final = t,
        }
    }

    pub fn is_linear(&self) -> bool {
        match self {
            PartitionedProblem::Additive(p) => p.linear,
            PartitionedProblem::Singular(p) => p.linear,
        }
    }

    pub fn has_exact(&self) -> bool {
        match self {
            PartitionedProblem::Additive(p) => p.exact.is_some(),
            PartitionedProblem::Singular(p) => p.exact.is_some(),
        }
    }

    pub fn as_additive(&self) -> Result<&AdditiveProblem> {
        match self {
            PartitionedProblem::Additive(p) => Ok(p),
            PartitionedProblem::Singular(p) => Err(GlmError::Incompatible(format!(
                "problem `{}` is not additively split",
                p.name
            ))),
        }
    }

    pub fn as_singular(&self) -> Result<&SingularProblem> {
        match self {
            PartitionedProblem::Singular(p) => Ok(p),
            PartitionedProblem::Additive(p) => Err(GlmError::Incompatible(format!(
                "problem `{}` is not in (f, g) component form",
                p.name
            ))),
        }
    }
}

/// Linear stiff part `J` of an implicit right-hand side `f^I = J y + r^I(y)`.
#[derive(Clone)]
pub struct StiffSplit {
    pub j: DMatrix<f64>,
    pub remainder: Field,
    /// Documentation only: estimated Lipschitz constant of `f^E`.
    pub lipschitz_explicit: Option<f64>,
    /// Documentation only: estimated Lipschitz constant of `r^I`.
    pub lipschitz_remainder: Option<f64>,
}

impl StiffSplit {
    /// Rejects `J` unless it is numerically diagonalizable with eigenvalue
    /// real parts `<= 0`.
    pub fn new(j: DMatrix<f64>, remainder: Field) -> Result<Self> {
        let m = j.nrows();
        if j.ncols() != m {
            return Err(GlmError::param("J", "must be square"));
        }
        let scale = j.amax().max(1.0);
        let eigs = j.complex_eigenvalues();
        if let Some(e) = eigs.iter().find(|e| e.re > 1e-12 * scale) {
            return Err(GlmError::param("J", format!("eigenvalue {e} has positive real part")));
        }
        // Repeated eigenvalues need a full eigenspace.
        let tol = 1e-8 * scale;
        for (i, e) in eigs.iter().enumerate() {
            let mult = eigs.iter().filter(|o| (*o - e).norm() <= tol).count();
            if mult > 1 && eigs.iter().position(|o| (o - e).norm() <= tol) == Some(i) {
                let shifted = j.map(num_complex::Complex64::from) - DMatrix::identity(m, m) * *e;
                let rank = shifted.svd(false, false).rank(1e-7 * scale);
                if rank != m - mult {
                    return Err(GlmError::param("J", "matrix is not diagonalizable"));
                }
            }
        }
        Ok(StiffSplit {
            j,
            remainder,
            lipschitz_explicit: None,
            lipschitz_remainder: None,
        })
    }
}

/// Euclidean logarithmic norm: the largest eigenvalue of `(J + Jᵀ)/2`.
pub fn log_norm(j: &DMatrix<f64>) -> f64 {
    let sym = (j + j.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |m, &x| m.max(x))
}

#[derive(Debug, Clone)]
pub struct WellPosedReport {
    pub max_log_norm: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Evaluates `μ₂(g_z)` at the given `(x, z)` points; passes iff the maximum
/// is at most `-1 + 1e-8`.
pub fn check_spp_wellposed(problem: &SingularProblem, samples: &[(DVector<f64>, DVector<f64>)]) -> WellPosedReport {
    let max_log_norm = samples
        .iter()
        .map(|(x, z)| log_norm(&(problem.g_z)(x, z)))
        .fold(f64::NEG_INFINITY, f64::max);
    WellPosedReport {
        max_log_norm,
        samples: samples.len(),
        pass: !samples.is_empty() && max_log_norm <= -1.0 + 1e-8,
    }
}

/// `n` points along a reference trajectory on `[t0, t_final]`: the exact
/// solution when available, otherwise the reduced (ε → 0) solution computed
/// with fine RK4 steps, which is within O(ε) of the smooth solution.
pub fn reference_samples(problem: &SingularProblem, n: usize) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let n = n.max(2);
    let span = problem.t_final - problem.t0;
    let times: Vec<f64> = (0..n).map(|k| problem.t0 + span * k as f64 / (n - 1) as f64).collect();
    if let Some(exact) = &problem.exact {
        return Ok(times.iter().map(|&t| exact(t)).collect());
    }
    let per_segment = 200;
    let h = span / ((n - 1) * per_segment) as f64;
    let mut x = problem.x0.clone();
    let mut z = problem.z0.clone();
    let mut out = vec![(x.clone(), z.clone())];
    for _ in 1..n {
        for _ in 0..per_segment {
            let rhs = |x: &DVector<f64>| -> Result<DVector<f64>> { crate::dae::reduced_rhs(problem, x, &z) };
            x = crate::starting::rk4_step_fallible(&rhs, &x, h)?;
            z = crate::dae::solve_algebraic(problem, &x, &z)?;
        }
        out.push((x.clone(), z.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    #[test]
    fn log_norm_of_minus_identity() {
        for m in 1..5 {
            assert!((log_norm(&(-DMatrix::<f64>::identity(m, m))) + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_norm_of_skew_matrix_is_zero() {
        assert!(log_norm(&dmatrix![0.0, 1.0; -1.0, 0.0]).abs() < 1e-15);
    }

    #[test]
    fn log_norm_of_jordan_like_block() {
        assert!((log_norm(&dmatrix![-2.0, 1.0; 0.0, -2.0]) + 1.5).abs() < 1e-14);
    }

    fn scalar_spp(sign: f64) -> SingularProblem {
        let one = |v: f64| -> PairJacobian { Arc::new(move |_, _| dmatrix![v]) };
        SingularProblem {
            name: "scalar".into(),
            eps: 0.1,
            t0: 0.0,
            x0: DVector::from_element(1, 1.0),
            z0: DVector::from_element(1, 0.0),
            t_final: 1.0,
            f: Arc::new(|_, _| DVector::zeros(1)),
            g: Arc::new(move |_, z| z * sign),
            f_x: one(0.0),
            f_z: one(0.0),
            g_x: one(0.0),
            g_z: one(sign),
            exact: None,
            derivatives: None,
            linear: true,
        }
    }

    #[test]
    fn minus_z_is_a_boundary_pass() {
        let p = scalar_spp(-1.0);
        let pts = vec![(p.x0.clone(), p.z0.clone()); 3];
        let rep = check_spp_wellposed(&p, &pts);
        assert_eq!(rep.max_log_norm, -1.0);
        assert!(rep.pass);
    }

    #[test]
    fn plus_z_fails_with_max_one() {
        let p = scalar_spp(1.0);
        let pts = vec![(p.x0.clone(), p.z0.clone()); 3];
        let rep = check_spp_wellposed(&p, &pts);
        assert_eq!(rep.max_log_norm, 1.0);
        assert!(!rep.pass);
        let flipped = scalar_spp(-1.0).with_flipped_constraint();
        assert!(!check_spp_wellposed(&flipped, &pts).pass);
    }

    #[test]
    fn stiff_split_rejects_growth_and_defective_matrices() {
        let zero: Field = Arc::new(|y| DVector::zeros(y.len()));
        assert!(StiffSplit::new(dmatrix![-1.0, 0.0; 0.0, -3.0], zero.clone()).is_ok());
        assert!(StiffSplit::new(dmatrix![-1.0, 0.0; 0.0, -1.0], zero.clone()).is_ok());
        assert!(StiffSplit::new(dmatrix![0.0, 1.0; -1.0, 0.0], zero.clone()).is_ok());
        assert!(StiffSplit::new(dmatrix![0.5, 0.0; 0.0, -1.0], zero.clone()).is_err());
        assert!(StiffSplit::new(dmatrix![-1.0, 1.0; 0.0, -1.0], zero).is_err());
    }

    fn square(m: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-10.0f64..10.0, m * m).prop_map(move |v| DMatrix::from_vec(m, m, v))
    }

    proptest! {
        #[test]
        fn log_norm_is_positively_homogeneous(j in square(4), alpha in 0.0f64..50.0) {
            let lhs = log_norm(&(&j * alpha));
            let rhs = alpha * log_norm(&j);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }

        #[test]
        fn log_norm_shifts_with_identity(j in square(3), beta in -20.0f64..20.0) {
            let lhs = log_norm(&(&j + DMatrix::identity(3, 3) * beta));
            let rhs = log_norm(&j) + beta;
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }
}
