use num_complex::Complex64;

use super::stability::{spectral_radius, stability_matrix_at_infinity};
use super::{ImexGlmPair, ResidualReport};

/// Tolerances for the class-of-interest checks.
#[derive(Debug, Clone, Copy)]
pub struct ClassTolerances {
    /// Eigenvalues of `A^I` count as real when `|Im| <= eig_imag_rel * (1 + |Re|)`.
    pub eig_imag_rel: f64,
    /// Eigenvalues of `A^I` count as positive when `Re >= eig_real_min`.
    pub eig_real_min: f64,
    /// `ρ(M^I(∞)) <= 1 - rho_margin`.
    pub rho_margin: f64,
    /// Residual bound for preconsistency, output and stage conditions.
    pub order_tol: f64,
}

impl Default for ClassTolerances {
    fn default() -> Self {
        ClassTolerances {
            eig_imag_rel: 1e-10,
            eig_real_min: 1e-10,
            rho_margin: 1e-8,
            order_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassReport {
    pub internally_consistent: bool,
    pub stage_orders_ok: bool,
    pub implicit_a_eigs: Vec<Complex64>,
    pub eigs_positive: bool,
    /// NaN when `A^I` is singular.
    pub rho_m_infinity: f64,
    pub rho_lt_one: bool,
    pub overall: bool,
    pub explicit_residuals: ResidualReport,
    pub implicit_residuals: ResidualReport,
    pub effective_q_explicit: usize,
    pub effective_q_implicit: usize,
}

fn orders_ok(res: &ResidualReport, p: usize, declared_q: usize, tol: f64) -> (bool, usize) {
    let q = res.effective_stage_order(tol);
    let ok = res.preconsistent(tol)
        && res.output_order_holds(tol)
        && q + 1 >= p
        && q >= declared_q;
    (ok, q)
}

/// Checks the four class-of-interest properties. Failures are reported in
/// the returned fields, never raised.
pub fn validate_class_of_interest(pair: &ImexGlmPair, tol: ClassTolerances) -> ClassReport {
    let p = pair.p();
    let explicit_residuals = pair.explicit.order_condition_residuals();
    let implicit_residuals = pair.implicit.order_condition_residuals();
    let (ok_e, effective_q_explicit) = orders_ok(&explicit_residuals, p, pair.explicit.q, tol.order_tol);
    let (ok_i, effective_q_implicit) = orders_ok(&implicit_residuals, p, pair.implicit.q, tol.order_tol);

    let implicit_a_eigs: Vec<Complex64> = pair.implicit.a.complex_eigenvalues().iter().copied().collect();
    let eigs_positive = implicit_a_eigs
        .iter()
        .all(|e| e.im.abs() <= tol.eig_imag_rel * (1.0 + e.re.abs()) && e.re >= tol.eig_real_min);

    let rho_m_infinity = stability_matrix_at_infinity(&pair.implicit)
        .map(|m| spectral_radius(&m))
        .unwrap_or(f64::NAN);
    let rho_lt_one = rho_m_infinity <= 1.0 - tol.rho_margin;

    let internally_consistent = pair.internally_consistent();
    let stage_orders_ok = ok_e && ok_i;
    ClassReport {
        internally_consistent,
        stage_orders_ok,
        implicit_a_eigs,
        eigs_positive,
        rho_m_infinity,
        rho_lt_one,
        overall: internally_consistent && stage_orders_ok && eigs_positive && rho_lt_one,
        explicit_residuals,
        implicit_residuals,
        effective_q_explicit,
        effective_q_implicit,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse_tableau, shipped, shipped_names, SplitMode};
    use super::*;

    const NAIVE_EULER: &str = r#"{
        "name": "naive", "mode": "component", "s": 1, "r": 1, "p": 1,
        "q_explicit": 1, "q_implicit": 1,
        "c_explicit": [0.0], "c_implicit": [1.0],
        "A_explicit": [[0.0]], "A_implicit": [[1.0]], "U": [[1.0]],
        "B_explicit": [[1.0]], "B_implicit": [[1.0]], "V": [[1.0]],
        "W_explicit": [[1.0, 0.0]], "W_implicit": [[1.0, 0.0]]
    }"#;

    #[test]
    fn naive_euler_pair_is_not_internally_consistent() {
        let pair = parse_tableau(NAIVE_EULER).unwrap();
        assert_eq!(pair.mode, SplitMode::Component);
        let rep = validate_class_of_interest(&pair, ClassTolerances::default());
        assert!(!rep.internally_consistent);
        assert!(!rep.overall);
        assert!(rep.eigs_positive);
        assert_eq!(rep.rho_m_infinity, 0.0);
        assert!(rep.rho_lt_one);
    }

    #[test]
    fn shipped_pairs_are_certified_exactly() {
        for name in shipped_names() {
            let pair = shipped(name).unwrap();
            let rep = validate_class_of_interest(&pair, ClassTolerances::default());
            assert!(rep.internally_consistent, "{name}");
            assert!(rep.stage_orders_ok, "{name}");
            assert!(rep.eigs_positive, "{name}");
            assert_eq!(rep.explicit_residuals.max_required(), 0.0, "{name}");
            assert_eq!(rep.implicit_residuals.max_required(), 0.0, "{name}");
            assert_eq!(rep.effective_q_explicit, pair.explicit.q, "{name}");
            assert_eq!(rep.effective_q_implicit, pair.implicit.q, "{name}");
        }
    }

    #[test]
    fn class_membership_of_shipped_pairs() {
        let tol = ClassTolerances::default();
        for name in ["imex-glm-p1", "imex-glm-p2"] {
            let rep = validate_class_of_interest(&shipped(name).unwrap(), tol);
            assert!(rep.overall, "{name}: {rep:?}");
        }
        // Unimodular eigenvalues at infinity: power bounded but outside the class.
        let rep = validate_class_of_interest(&shipped("imex-glm-p2-nu").unwrap(), tol);
        assert!((rep.rho_m_infinity - 1.0).abs() < 1e-12);
        assert!(!rep.rho_lt_one);
        assert!(!rep.overall);
    }

    #[test]
    fn overstated_stage_order_fails() {
        let mut pair = shipped("imex-glm-p2-nu").unwrap();
        pair.implicit.q = 2;
        let rep = validate_class_of_interest(&pair, ClassTolerances::default());
        assert!(!rep.stage_orders_ok);
    }

    #[test]
    fn complex_eigenvalues_are_rejected() {
        let mut pair = shipped("imex-glm-p2").unwrap();
        pair.implicit.exact = None;
        pair.implicit.a[(0, 1)] = -1.0;
        let rep = validate_class_of_interest(&pair, ClassTolerances::default());
        assert!(!rep.eigs_positive);
    }
}
