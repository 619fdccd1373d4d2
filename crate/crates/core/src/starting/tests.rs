use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use super::*;
use crate::problems::{builtin, Params};
use crate::tableau::shipped;

fn dahlquist(le: f64, li: f64) -> AdditiveProblem {
    AdditiveProblem::linear("dahlquist", dmatrix![le], dmatrix![li], dvector![1.0], 1.0)
}

#[test]
fn rk4_reproduces_degree_four_taylor_polynomial() {
    let h = 0.1;
    let y = rk4_step(&|y: &DVector<f64>| y.clone(), &dvector![1.0], h);
    let taylor = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
    assert!((y[0] - taylor).abs() <= 1e-16);
    let yf = rk4_step_fallible(&|y: &DVector<f64>| Ok(y.clone()), &dvector![1.0], h).unwrap();
    assert_eq!(yf, y);
}

#[test]
fn additive_start_uses_exact_split_derivatives() {
    let pair = shipped("imex-glm-p2").unwrap();
    let (le, li, h) = (-1.0, -10.0, 0.1);
    let p = dahlquist(le, li);
    let d = additive_derivatives(&p, 2, h, StartOptions::default()).unwrap();
    assert_eq!(d.source, DerivativeSource::ExactProvided);
    let y = nordsieck_additive(&pair, &d, h);
    let lam = le + li;
    for j in 0..2 {
        let expect = pair.explicit.w[(j, 0)]
            + h * (pair.explicit.w[(j, 1)] * le + pair.implicit.w[(j, 1)] * li)
            + h * h * lam * (pair.explicit.w[(j, 2)] * le + pair.implicit.w[(j, 2)] * li);
        assert!((y[(0, j)] - expect).abs() <= 1e-15);
    }
}

#[test]
fn chain_rule_matches_exact_derivatives() {
    let p = builtin("nonlinear-additive", &Params::new()).unwrap();
    let p = p.as_additive().unwrap();
    let exact = exact_additive_derivatives(p, 0.0, 2).unwrap();
    let chain = additive_chain_rule(p, 2).unwrap();
    for k in 0..2 {
        assert!((&exact.explicit[k] - &chain.explicit[k]).amax() <= 1e-9 * (1.0 + exact.explicit[k].amax()));
        assert!((&exact.implicit[k] - &chain.implicit[k]).amax() <= 1e-9 * (1.0 + exact.implicit[k].amax()));
    }
}

#[test]
fn bootstrap_matches_exact_derivatives() {
    let p = dahlquist(-0.5, -2.0);
    let exact = exact_additive_derivatives(&p, 0.0, 4).unwrap();
    let boot = bootstrap_additive(&p, 4, 0.1).unwrap();
    assert_eq!(boot.source, DerivativeSource::Bootstrapped);
    let tols = [1e-14, 1e-8, 1e-5, 1e-3];
    for k in 0..4 {
        assert!((&exact.explicit[k] - &boot.explicit[k]).amax() <= tols[k], "k={k}");
        assert!((&exact.implicit[k] - &boot.implicit[k]).amax() <= 4.0 * tols[k], "k={k}");
    }
}

#[test]
fn missing_derivatives_without_bootstrap() {
    let p = dahlquist(-1.0, -1.0).without_explicit();
    let e = additive_derivatives(&p, 3, 0.1, StartOptions { allow_bootstrap: false }).unwrap_err();
    assert!(matches!(e, GlmError::MissingDerivatives { order: 3 }));
    assert!(matches!(bootstrap_additive(&p, 5, 0.1), Err(GlmError::Bootstrap(_))));
}

#[test]
fn component_chain_rule_matches_kaps_derivatives() {
    for eps in [1e-2, 1e-7, 0.0] {
        let p = builtin("kaps", &Params::new().with("eps", eps)).unwrap();
        let mut p = p.as_singular().unwrap().clone();
        p.derivatives = None;
        let d = component_derivatives(&p, 2, 0.1, StartOptions::default()).unwrap();
        assert_eq!(d.source, DerivativeSource::ChainRule);
        let expect_x = [1.0, -1.0, 1.0];
        let expect_z = [1.0, -2.0, 4.0];
        for k in 0..3 {
            // The reduced formulas ignore O(ε) corrections.
            let tol = if k == 0 { 0.0 } else { 1e-6 + 10.0 * eps };
            assert!((d.x[k][0] - expect_x[k]).abs() <= tol, "eps={eps} k={k}");
            assert!((d.z[k][0] - expect_z[k]).abs() <= tol, "eps={eps} k={k}");
        }
    }
}

#[test]
fn component_bootstrap_matches_kaps_derivatives() {
    let p = builtin("kaps", &Params::new().with("eps", 0.5)).unwrap();
    let p = p.as_singular().unwrap();
    let d = bootstrap_component(p, 3, 0.1).unwrap();
    let expect_z = [1.0, -2.0, 4.0, -8.0];
    for k in 0..4 {
        assert!((d.x[k][0] - (-1f64).powi(k as i32)).abs() <= 1e-3, "k={k}");
        assert!((d.z[k][0] - expect_z[k]).abs() <= 1e-2, "k={k}");
    }
}

#[test]
fn dae_start_requires_consistent_data() {
    let p = builtin("kaps", &Params::new().with("eps", 0.0)).unwrap();
    let mut p = p.as_singular().unwrap().clone();
    p.z0 = dvector![1.5];
    let e = component_derivatives(&p, 2, 0.1, StartOptions::default()).unwrap_err();
    assert!(matches!(e, GlmError::InconsistentInitialData { .. }));
    p.z0 = dvector![1.0];
    p.derivatives = None;
    assert!(matches!(bootstrap_component(&p, 3, 0.1), Err(GlmError::Bootstrap(_))));
}

#[test]
fn component_start_weighs_x_and_z_separately() {
    let pair = shipped("imex-glm-p2").unwrap();
    let p = builtin("kaps", &Params::new().with("eps", 1e-3)).unwrap();
    let s = start(&pair, &p, 0.1, StartOptions::default()).unwrap();
    let (x, z) = s.xz().unwrap();
    let (we, wi) = (&pair.explicit.w, &pair.implicit.w);
    for j in 0..2 {
        let ex = we[(j, 0)] - 0.1 * we[(j, 1)] + 0.01 * we[(j, 2)];
        let ez = wi[(j, 0)] - 0.2 * wi[(j, 1)] + 0.04 * wi[(j, 2)];
        assert!((x[(0, j)] - ex).abs() <= 1e-15);
        assert!((z[(0, j)] - ez).abs() <= 1e-15);
    }
}

#[test]
fn start_rejects_bad_step_and_component_pair_on_additive_problem() {
    let pair = shipped("imex-glm-p2-nu").unwrap();
    let p = PartitionedProblem::Additive(dahlquist(-1.0, -1.0));
    assert!(matches!(start(&pair, &p, 0.1, StartOptions::default()), Err(GlmError::Incompatible(_))));
    let pair = shipped("imex-glm-p2").unwrap();
    assert!(start(&pair, &p, -0.1, StartOptions::default()).is_err());
    assert!(start(&pair, &p, f64::NAN, StartOptions::default()).is_err());
}

#[test]
fn stencil_is_exact_for_cubics() {
    let f = |t: f64| DVector::from_element(1, 2.0 - t + 3.0 * t * t - 0.5 * t * t * t);
    let hb = 0.01;
    let samples = [f(-2.0 * hb), f(-hb), f(0.0), f(hb), f(2.0 * hb)];
    let d = stencil(&samples, hb, 3);
    let expect = [2.0, -1.0, 6.0, -3.0];
    for k in 0..4 {
        assert!((d[k][0] - expect[k]).abs() <= 1e-8, "k={k}");
    }
    let _ = DMatrix::<f64>::zeros(0, 0);
}
