//! GLM coefficient data for the explicit and implicit halves of an IMEX pair.
//!
//! A single component method advances `s` internal stages and `r` external
//! stages with the coefficient matrices `A` (s×s), `U` (s×r), `B` (r×s) and
//! `V` (r×r). The external stages carry the Nordsieck combinations encoded by
//! the weight matrix `W = [w_0 … w_p]` (r×(p+1)).
//!
//! Stability matrices use the convention
//!
//! ```text
//! M(z) = V + z B (I - z A)^{-1} U,        M(∞) = V - B A^{-1} U,
//! ```
//!
//! so that `M(∞)` really is the limit of `M(z)` as `z → -∞`. Some references
//! print `(I + zA)` in the resolvent; with that sign the limit does not match
//! `V - B A^{-1} U`, so the self-consistent form is used throughout.

mod class;
mod file;
mod rational;
mod stability;

pub use class::{validate_class_of_interest, ClassReport, ClassTolerances};
pub use file::{parse_tableau, serialize_tableau};
pub use rational::{ExactTableau, Rational};
pub(crate) use rational::to_dmatrix as rational_to_dmatrix;
pub use stability::{
    classify_spectrum, spectral_radius, spectral_radius_complex, stability_matrix, stability_matrix_at_infinity, SpectrumKind,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{GlmError, Result};

/// How the two components share coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// `y' = f^E(y) + f^I(y)`: one set of external stages, shared `U` and `V`.
    Additive,
    /// `x' = f(x, z)`, `z' = g(x, z)`: separate external stages per component.
    Component,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::Additive => "additive",
            SplitMode::Component => "component",
        }
    }
}

/// One component general linear method.
#[derive(Debug, Clone)]
pub struct GlmTableau {
    pub s: usize,
    pub r: usize,
    pub p: usize,
    /// Declared stage order. Trusted only after [`GlmTableau::residuals`].
    pub q: usize,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// Rational coefficients when the tableau was read in exact mode.
    pub exact: Option<ExactTableau>,
}

/// Max-norm residuals of the preconsistency and order conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `|U w_0 - 1|`.
    pub preconsistency_u: f64,
    /// `|V w_0 - w_0|`.
    pub preconsistency_v: f64,
    /// Stage conditions for `k = 1..=p` (index `k - 1`). Only the first `q`
    /// are required to vanish.
    pub stage: Vec<f64>,
    /// Output conditions for `k = 1..=p` (index `k - 1`).
    pub output: Vec<f64>,
    /// Declared stage order the report was built for.
    pub q: usize,
}

impl ResidualReport {
    /// Largest residual among the conditions the declared orders require.
    pub fn max_required(&self) -> f64 {
        self.stage[..self.q.min(self.stage.len())]
            .iter()
            .chain(self.output.iter())
            .fold(self.preconsistency_u.max(self.preconsistency_v), |m, &x| m.max(x))
    }

    pub fn preconsistent(&self, tol: f64) -> bool {
        self.preconsistency_u <= tol && self.preconsistency_v <= tol
    }

    /// Largest `k` such that every stage condition `1..=k` holds to `tol`.
    pub fn effective_stage_order(&self, tol: f64) -> usize {
        self.stage.iter().take_while(|&&x| x <= tol).count()
    }

    /// True when the output conditions for `k = 1..=p` hold to `tol`.
    pub fn output_order_holds(&self, tol: f64) -> bool {
        self.output.iter().all(|&x| x <= tol)
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

impl GlmTableau {
    /// Builds a tableau after checking dimensions and finiteness.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: usize,
        q: usize,
        c: DVector<f64>,
        a: DMatrix<f64>,
        u: DMatrix<f64>,
        b: DMatrix<f64>,
        v: DMatrix<f64>,
        w: DMatrix<f64>,
    ) -> Result<Self> {
        let s = c.len();
        let r = v.nrows();
        if s == 0 {
            return Err(GlmError::schema("c", "stage count must be positive"));
        }
        if r == 0 {
            return Err(GlmError::schema("V", "external stage count must be positive"));
        }
        check_shape("A", &a, s, s)?;
        check_shape("U", &u, s, r)?;
        check_shape("B", &b, r, s)?;
        check_shape("V", &v, r, r)?;
        check_shape("W", &w, r, p + 1)?;
        for (name, m) in [("A", &a), ("U", &u), ("B", &b), ("V", &v), ("W", &w)] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(GlmError::NonFinite { field: name.into() });
            }
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(GlmError::NonFinite { field: "c".into() });
        }
        Ok(GlmTableau {
            s,
            r,
            p,
            q,
            c,
            a,
            u,
            b,
            v,
            w,
            exact: None,
        })
    }

    pub fn w0(&self) -> DVector<f64> {
        self.w.column(0).into_owned()
    }

    /// Nordsieck weight column `w_k`.
    pub fn w_col(&self, k: usize) -> DVector<f64> {
        self.w.column(k).into_owned()
    }

    pub fn is_strictly_lower(&self) -> bool {
        (0..self.s).all(|i| (i..self.s).all(|j| self.a[(i, j)] == 0.0))
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.s).all(|i| (i + 1..self.s).all(|j| self.a[(i, j)] == 0.0))
    }

    /// Floating-point residuals of preconsistency and the order conditions.
    pub fn residuals(&self) -> ResidualReport {
        let ones = DVector::from_element(self.s, 1.0);
        let w0 = self.w0();
        let preconsistency_u = max_abs(&(&self.u * &w0 - &ones));
        let preconsistency_v = max_abs(&(&self.v * &w0 - &w0));
        let cpow = |k: usize| self.c.map(|x| x.powi(k as i32));
        let mut stage = Vec::with_capacity(self.p);
        let mut output = Vec::with_capacity(self.p);
        for k in 1..=self.p {
            let ck = cpow(k) / factorial(k);
            let ck1 = cpow(k - 1) / factorial(k - 1);
            let wk = self.w_col(k);
            let st = &ck - &self.a * &ck1 - &self.u * &wk;
            stage.push(max_abs(&st));
            let mut acc = DVector::zeros(self.r);
            for l in 0..=k {
                acc += self.w_col(k - l) / factorial(l);
            }
            let out = acc - &self.b * &ck1 - &self.v * &wk;
            output.push(max_abs(&out));
        }
        ResidualReport {
            preconsistency_u,
            preconsistency_v,
            stage,
            output,
            q: self.q,
        }
    }

    /// Residuals in exact arithmetic when rational coefficients are present,
    /// otherwise the floating-point residuals.
    pub fn order_condition_residuals(&self) -> ResidualReport {
        match &self.exact {
            Some(ex) => ex.residuals(self.q),
            None => self.residuals(),
        }
    }

    pub fn stability_matrix(&self, z: num_complex::Complex64) -> Result<DMatrix<num_complex::Complex64>> {
        stability_matrix(self, z)
    }

    pub fn stability_matrix_at_infinity(&self) -> Result<DMatrix<f64>> {
        stability_matrix_at_infinity(self)
    }

    /// The same method with every stage derivative weight removed, so that
    /// it treats its right-hand side as if it were absent.
    pub(crate) fn zero_like(&self) -> Self {
        let mut t = self.clone();
        t.a.fill(0.0);
        t.b.fill(0.0);
        t.exact = None;
        t
    }
}

fn check_shape(field: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(GlmError::Dimension {
            field: field.into(),
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

/// An explicit/implicit pair of GLMs.
#[derive(Debug, Clone)]
pub struct ImexGlmPair {
    pub name: String,
    pub mode: SplitMode,
    pub explicit: GlmTableau,
    pub implicit: GlmTableau,
}

impl ImexGlmPair {
    /// Assembles a pair, enforcing the structural invariants: matching
    /// `s`, `r`, `p`; strictly lower triangular explicit `A`; and in
    /// additive mode identical `U`, `V` and a shared `w_0`.
    pub fn new(
        name: impl Into<String>,
        mode: SplitMode,
        explicit: GlmTableau,
        implicit: GlmTableau,
    ) -> Result<Self> {
        if explicit.s != implicit.s {
            return Err(GlmError::Dimension {
                field: "A_implicit".into(),
                expected: format!("s = {}", explicit.s),
                found: format!("s = {}", implicit.s),
            });
        }
        if explicit.r != implicit.r {
            return Err(GlmError::Dimension {
                field: "V_implicit".into(),
                expected: format!("r = {}", explicit.r),
                found: format!("r = {}", implicit.r),
            });
        }
        if explicit.p != implicit.p {
            return Err(GlmError::Dimension {
                field: "W_implicit".into(),
                expected: format!("p = {}", explicit.p),
                found: format!("p = {}", implicit.p),
            });
        }
        if !explicit.is_strictly_lower() {
            return Err(GlmError::schema(
                "A_explicit",
                "explicit component must be strictly lower triangular",
            ));
        }
        if mode == SplitMode::Additive {
            if explicit.u != implicit.u {
                return Err(GlmError::schema("U", "additive pairs share U"));
            }
            if explicit.v != implicit.v {
                return Err(GlmError::schema("V", "additive pairs share V"));
            }
            if explicit.w.column(0) != implicit.w.column(0) {
                return Err(GlmError::schema(
                    "W_implicit",
                    "additive pairs share the first weight column w_0",
                ));
            }
        }
        Ok(ImexGlmPair {
            name: name.into(),
            mode,
            explicit,
            implicit,
        })
    }

    pub fn s(&self) -> usize {
        self.explicit.s
    }

    pub fn r(&self) -> usize {
        self.explicit.r
    }

    pub fn p(&self) -> usize {
        self.explicit.p
    }

    /// Abscissae of the explicit component (equal to the implicit ones for
    /// internally consistent pairs).
    pub fn c(&self) -> &DVector<f64> {
        &self.explicit.c
    }

    pub fn internally_consistent(&self) -> bool {
        self.explicit.c == self.implicit.c
    }

    /// Index of the stage with abscissa exactly one, if any. That stage
    /// approximates the solution at the end of the step.
    pub fn endpoint_stage(&self) -> Option<usize> {
        self.c().iter().position(|&c| c == 1.0)
    }

    /// External blocks in which the solution error is measured, for the
    /// explicit (`x` or `y`) and implicit (`z`) variables: the first block
    /// whose Nordsieck weights are `(1, 0, ..., 0)`, i.e. a pure solution
    /// value, otherwise block 0. In additive mode both weight rows must be
    /// pure and the two indices coincide.
    pub fn solution_blocks(&self) -> (usize, usize) {
        let pure = |t: &GlmTableau, j: usize| t.w[(j, 0)] == 1.0 && t.w.row(j).iter().skip(1).all(|&v| v == 0.0);
        let first = |ok: &dyn Fn(usize) -> bool| (0..self.r()).find(|&j| ok(j)).unwrap_or(0);
        match self.mode {
            SplitMode::Additive => {
                let j = first(&|j| pure(&self.explicit, j) && pure(&self.implicit, j));
                (j, j)
            }
            SplitMode::Component => (first(&|j| pure(&self.explicit, j)), first(&|j| pure(&self.implicit, j))),
        }
    }

    /// The pair obtained by replacing the implicit component with the
    /// explicit one, so every stiff term is treated explicitly.
    pub fn explicit_only(&self) -> Self {
        ImexGlmPair {
            name: format!("{}-explicit-only", self.name),
            mode: self.mode,
            explicit: self.explicit.clone(),
            implicit: self.explicit.clone(),
        }
    }

    /// Pure explicit method: the implicit component contributes nothing.
    pub fn without_implicit(&self) -> Self {
        let mut out = self.clone();
        out.implicit = self.implicit.zero_like();
        out
    }

    /// Pure implicit method: the explicit component contributes nothing.
    pub fn without_explicit(&self) -> Self {
        let mut out = self.clone();
        out.explicit = self.explicit.zero_like();
        out
    }
}

const SHIPPED: &[(&str, &str)] = &[
    ("imex-glm-p1", include_str!("../../../../methods/imex-glm-p1.json")),
    ("imex-glm-p2", include_str!("../../../../methods/imex-glm-p2.json")),
    ("imex-glm-p2-nu", include_str!("../../../../methods/imex-glm-p2-nu.json")),
    ("imex-glm-p2-neg1", include_str!("../../../../methods/imex-glm-p2-neg1.json")),
];

/// Names of the tableaux bundled with the library.
pub fn shipped_names() -> Vec<&'static str> {
    SHIPPED.iter().map(|(n, _)| *n).collect()
}

/// Loads one of the bundled tableaux by name.
pub fn shipped(name: &str) -> Result<ImexGlmPair> {
    let (_, text) = SHIPPED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| GlmError::param("method", format!("no bundled tableau named `{name}`")))?;
    parse_tableau(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    pub(crate) fn implicit_euler() -> GlmTableau {
        GlmTableau::new(
            1,
            1,
            dvector![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0, 0.0],
        )
        .unwrap()
    }

    pub(crate) fn explicit_euler() -> GlmTableau {
        GlmTableau::new(
            1,
            1,
            dvector![0.0],
            dmatrix![0.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn implicit_euler_residuals_vanish() {
        let r = implicit_euler().residuals();
        assert_eq!(r.preconsistency_u, 0.0);
        assert_eq!(r.preconsistency_v, 0.0);
        assert_eq!(r.stage, vec![0.0]);
        assert_eq!(r.output, vec![0.0]);
    }

    #[test]
    fn explicit_euler_residuals_vanish() {
        let r = explicit_euler().residuals();
        assert_eq!(r.max_required(), 0.0);
    }

    #[test]
    fn perturbed_b_shows_up_in_output_condition() {
        let mut t = implicit_euler();
        t.b[(0, 0)] = 1.1;
        let r = t.residuals();
        assert!((r.output[0] - 0.1).abs() < 1e-15);
        assert_eq!(r.stage[0], 0.0);
    }

    #[test]
    fn u_equal_two_breaks_preconsistency() {
        let mut t = implicit_euler();
        t.u[(0, 0)] = 2.0;
        let r = t.residuals();
        assert_eq!(r.preconsistency_u, 1.0);
        assert!(!r.preconsistent(1e-12));
    }

    #[test]
    fn shape_errors_name_the_field() {
        let err = GlmTableau::new(
            1,
            1,
            dvector![1.0, 0.5],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0, 0.0],
        )
        .unwrap_err();
        assert!(matches!(err, GlmError::Dimension { ref field, .. } if field == "A"));
    }

    #[test]
    fn additive_pair_requires_shared_u() {
        let e = explicit_euler();
        let mut i = implicit_euler();
        i.c[0] = 0.0;
        i.u[(0, 0)] = 2.0;
        let err = ImexGlmPair::new("x", SplitMode::Additive, e, i).unwrap_err();
        assert!(matches!(err, GlmError::Schema { ref field, .. } if field == "U"));
    }

    #[test]
    fn explicit_component_must_be_strictly_lower() {
        let err = ImexGlmPair::new("x", SplitMode::Component, implicit_euler(), implicit_euler())
            .unwrap_err();
        assert!(matches!(err, GlmError::Schema { ref field, .. } if field == "A_explicit"));
    }

    #[test]
    fn every_shipped_tableau_loads() {
        for name in shipped_names() {
            let pair = shipped(name).unwrap();
            assert_eq!(pair.name, name);
            assert_eq!(pair.s(), 2);
            assert_eq!(pair.r(), 2);
            assert_eq!(pair.endpoint_stage(), Some(1));
        }
    }

    #[test]
    fn solution_blocks_pick_pure_value_rows() {
        // Additive p2: no block is a pure value in both components.
        assert_eq!(shipped("imex-glm-p2").unwrap().solution_blocks(), (0, 0));
        // Component pairs with W^I row 1 = (1, 0, 0).
        assert_eq!(shipped("imex-glm-p2-nu").unwrap().solution_blocks(), (0, 1));
        assert_eq!(shipped("imex-glm-p2-neg1").unwrap().solution_blocks(), (0, 1));
    }
}
