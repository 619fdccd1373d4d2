use std::sync::Arc;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use super::*;
use crate::problems::{builtin, Params};
use crate::tableau::{parse_tableau, shipped};

/// One-stage IMEX Euler in additive form.
pub(crate) const IMEX_EULER: &str = r#"{
    "name": "imex-euler", "mode": "additive", "s": 1, "r": 1, "p": 1,
    "q_explicit": 0, "q_implicit": 1, "c": [1.0],
    "A_explicit": [[0.0]], "A_implicit": [[1.0]], "U": [[1.0]],
    "B_explicit": [[1.0]], "B_implicit": [[1.0]], "V": [[1.0]],
    "W_explicit": [[1.0, 0.0]], "W_implicit": [[1.0, 0.0]]
}"#;

/// Two-stage Radau IIA (dense `A^I`) with a first-order explicit partner.
pub(crate) const RADAU_PAIR: &str = r#"{
    "name": "radau-pair", "mode": "additive", "rational": true,
    "s": 2, "r": 1, "p": 2, "q_explicit": 0, "q_implicit": 2,
    "c": ["1/3", "1"],
    "A_explicit": [["0", "0"], ["1", "0"]],
    "A_implicit": [["5/12", "-1/12"], ["3/4", "1/4"]],
    "U": [["1"], ["1"]],
    "B_explicit": [["3/4", "1/4"]],
    "B_implicit": [["3/4", "1/4"]],
    "V": [["1"]],
    "W_explicit": [["1", "0", "0"]],
    "W_implicit": [["1", "0", "0"]]
}"#;

fn dahlquist(le: f64, li: f64) -> AdditiveProblem {
    AdditiveProblem::linear("dahlquist", dmatrix![le], dmatrix![li], dvector![1.0], 1.0)
}

fn scalar_state(v: f64, h: f64) -> ExternalState {
    ExternalState::additive(DMatrix::from_element(1, 1, v), 0.0, h)
}

#[test]
fn imex_euler_closed_forms() {
    let pair = parse_tableau(IMEX_EULER).unwrap();
    let cfg = NewtonConfig::default();
    let (s, _) = step_additive(&pair, &dahlquist(0.0, -1.0), &scalar_state(1.0, 0.1), &cfg).unwrap();
    assert!((s.y().unwrap()[(0, 0)] - 1.0 / 1.1).abs() <= 1e-14);
    let (s, _) = step_additive(&pair, &dahlquist(-1.0, 0.0), &scalar_state(1.0, 0.1), &cfg).unwrap();
    assert!((s.y().unwrap()[(0, 0)] - 0.9).abs() <= 1e-14);
    assert_eq!(s.n, 1);
    assert_eq!(s.t, 0.1);
}

#[test]
fn radau_dense_stage_solve_matches_stability_function() {
    let pair = parse_tableau(RADAU_PAIR).unwrap();
    assert!(!pair.implicit.is_lower_triangular());
    let cfg = NewtonConfig::default();
    for (h, lam) in [(0.1, -1.0), (0.5, -30.0), (0.01, 2.0)] {
        let z: f64 = h * lam;
        let r = (1.0 + z / 3.0) / (1.0 - 2.0 * z / 3.0 + z * z / 6.0);
        let (s, st) = step_additive(&pair, &dahlquist(0.0, lam), &scalar_state(1.0, h), &cfg).unwrap();
        assert!((s.y().unwrap()[(0, 0)] - r).abs() <= 1e-14, "h={h} lam={lam}");
        assert_eq!(st.newton_iterations, 1);
    }
}

#[test]
fn radau_dense_solve_handles_nonlinear_problem() {
    let pair = parse_tableau(RADAU_PAIR).unwrap();
    let p = builtin("nonlinear-additive", &Params::new().with("lambda", -1e3)).unwrap();
    let p = p.as_additive().unwrap();
    let y = DMatrix::from_column_slice(2, 1, p.y0.as_slice());
    let (s, st) = step_additive(&pair, p, &ExternalState::additive(y, 0.0, 0.05), &NewtonConfig::default()).unwrap();
    assert!(s.is_finite());
    assert!(st.newton_iterations <= 6, "{}", st.newton_iterations);
}

#[test]
fn one_component_reductions_are_bit_identical() {
    let pair = shipped("imex-glm-p2").unwrap();
    let p = builtin("nonlinear-additive", &Params::new().with("lambda", -50.0)).unwrap();
    let p = p.as_additive().unwrap();
    let cfg = NewtonConfig::default();
    let y = DMatrix::from_fn(2, 2, |i, j| 0.9 + 0.05 * i as f64 - 0.02 * j as f64);
    let state = ExternalState::additive(y.clone(), 0.0, 0.03);

    let imp = p.without_explicit();
    let (ours, _) = step_additive(&pair, &imp, &state, &cfg).unwrap();
    let (fi, ji) = (imp.fi.clone(), imp.jac_i.clone());
    let reference = glm_step(&pair.implicit, &|y| fi(y), &|y| ji(y), &y, 0.03, &cfg).unwrap();
    assert_eq!(ours.y().unwrap(), &reference);

    let exp = p.without_implicit();
    let (ours, _) = step_additive(&pair, &exp, &state, &cfg).unwrap();
    let fe = exp.fe.clone();
    let m = p.m();
    let reference = glm_step(&pair.explicit, &|y| fe(y), &|_| DMatrix::zeros(m, m), &y, 0.03, &cfg).unwrap();
    assert_eq!(ours.y().unwrap(), &reference);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let pair = shipped("imex-glm-p2").unwrap();
    let p = builtin("kaps", &Params::new().with("eps", 1e-3)).unwrap();
    let run = || {
        let s0 = crate::starting::start(&pair, &p, 0.05, Default::default()).unwrap();
        integrate(&pair, &p, s0, 1.0, &NewtonConfig::default(), 1).unwrap()
    };
    let (a, b) = (run(), run());
    for (x, y) in a.states.iter().zip(&b.states) {
        assert_eq!(x.stacked(), y.stacked());
    }
}

#[test]
fn zero_field_leaves_preconsistent_state_fixed() {
    let pair = shipped("imex-glm-p2").unwrap();
    let zero = dahlquist(0.0, 0.0);
    let w0 = pair.explicit.w0();
    let y = DMatrix::from_fn(1, 2, |_, j| 3.0 * w0[j]);
    let (s, _) = step_additive(&pair, &zero, &ExternalState::additive(y.clone(), 0.0, 0.1), &NewtonConfig::default()).unwrap();
    assert!((s.y().unwrap() - y).amax() <= 4.0 * f64::EPSILON);
}

#[test]
fn component_stage_increment_recovery_is_consistent() {
    let pair = shipped("imex-glm-p2").unwrap();
    let p = builtin("kaps", &Params::new().with("eps", 1e-2)).unwrap();
    let p = p.as_singular().unwrap();
    let x = DMatrix::from_element(1, 2, 1.0);
    let z = DMatrix::from_element(1, 2, 1.0);
    let (_, st) = step_component(&pair, p, &ExternalState::component(x, z, 0.0, 0.1), &NewtonConfig::default()).unwrap();
    let StageData::Component { x: xs, z: zs } = &st.data else { panic!() };
    for i in 0..2 {
        let g = (p.g)(&xs.column(i).into_owned(), &zs.column(i).into_owned());
        let k = st.increments.1.column(i).into_owned();
        assert!((k - g * (0.1 / p.eps)).amax() <= 1e-8);
    }
}

#[test]
fn dense_component_solve_matches_stage_equations() {
    let pair = parse_tableau(RADAU_PAIR).unwrap();
    let p = builtin("linear-spp", &Params::new().with("eps", 1e-3)).unwrap();
    let p = p.as_singular().unwrap();
    let state = ExternalState::component(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 0.7), 0.0, 0.1);
    let (next, st) = step_component(&pair, p, &state, &NewtonConfig::default()).unwrap();
    assert!(next.is_finite());
    let StageData::Component { z: zs, .. } = &st.data else { panic!() };
    // Z = 0.7 + A (h/ε) g(X, Z) column-wise.
    let ai = &pair.implicit.a;
    let StageData::Component { x: xs, .. } = &st.data else { panic!() };
    for i in 0..2 {
        let mut rhs = 0.7;
        for j in 0..2 {
            let g = (p.g)(&xs.column(j).into_owned(), &zs.column(j).into_owned())[0];
            rhs += ai[(i, j)] * 0.1 / p.eps * g;
        }
        assert!((zs[(0, i)] - rhs).abs() <= 1e-9);
    }
}

#[test]
fn mismatched_pair_and_problem_are_rejected() {
    let mut pair = shipped("imex-glm-p2").unwrap();
    pair.mode = SplitMode::Component;
    let e = step_additive(&pair, &dahlquist(-1.0, -1.0), &ExternalState::additive(DMatrix::zeros(1, 2), 0.0, 0.1), &NewtonConfig::default())
        .unwrap_err();
    assert!(matches!(e, GlmError::Incompatible(_)));

    let pair = shipped("imex-glm-p2").unwrap();
    let p = PartitionedProblem::Additive(dahlquist(-1.0, -1.0));
    let state = ExternalState::component(DMatrix::zeros(1, 2), DMatrix::zeros(1, 2), 0.0, 0.1);
    assert!(matches!(
        solve_stages_newton(&pair, &p, &state, &NewtonConfig::default()),
        Err(GlmError::Incompatible(_))
    ));
}

#[test]
fn wrong_state_shape_is_a_dimension_error() {
    let pair = shipped("imex-glm-p2").unwrap();
    let e = step_additive(&pair, &dahlquist(-1.0, -1.0), &scalar_state(1.0, 0.1), &NewtonConfig::default()).unwrap_err();
    assert!(matches!(e, GlmError::Dimension { .. }));
}

#[test]
fn step_count_requires_integer_ratio() {
    assert_eq!(step_count(0.0, 1.0, 0.1).unwrap(), 10);
    assert_eq!(step_count(0.0, 1.0, 2f64.powi(-9)).unwrap(), 512);
    assert!(matches!(step_count(0.0, 1.0, 0.3), Err(GlmError::NonIntegerStepCount { .. })));
    assert!(matches!(step_count(0.0, 1.0, 2.0), Err(GlmError::NonIntegerStepCount { .. })));
}

#[test]
fn time_does_not_accumulate_rounding() {
    let mut s = scalar_state(0.0, 0.1);
    for _ in 0..1000 {
        s = s.advanced(s.data.clone());
    }
    assert!(s.t == 100.0, "{}", s.t);
    assert_eq!(s.n, 1000);
}

#[test]
fn explicit_only_pair_blows_up_on_stiff_problem() {
    let pair = shipped("imex-glm-p2").unwrap().explicit_only();
    let p = PartitionedProblem::Additive(AdditiveProblem::linear(
        "stiff",
        dmatrix![-1e4],
        dmatrix![0.0],
        dvector![1.0],
        100.0,
    ));
    let s0 = crate::starting::start(&pair, &p, 0.1, Default::default()).unwrap();
    let e = integrate(&pair, &p, s0, 100.0, &NewtonConfig::default(), 1).unwrap_err();
    assert!(matches!(e, GlmError::Unstable { .. }), "{e:?}");
}

#[test]
fn newton_failure_is_wrapped_with_step_context() {
    let pair = shipped("imex-glm-p2").unwrap();
    let mut p = dahlquist(0.0, -1.0);
    p.fi = Arc::new(|y: &DVector<f64>| y.map(|v| v * v + 1.0));
    p.jac_i = Arc::new(|y: &DVector<f64>| DMatrix::from_diagonal(&y.map(|v| 2.0 * v)));
    let p = PartitionedProblem::Additive(p);
    let s0 = ExternalState::additive(DMatrix::from_element(1, 2, 1.0), 0.0, 10.0);
    let e = integrate(&pair, &p, s0, 20.0, &NewtonConfig::default(), 1).unwrap_err();
    match e {
        GlmError::StepFailure { n, .. } => assert_eq!(n, 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn stride_records_every_kth_state_and_the_last() {
    let pair = shipped("imex-glm-p1").unwrap();
    let p = PartitionedProblem::Additive(dahlquist(-1.0, -2.0));
    let s0 = crate::starting::start(&pair, &p, 0.1, Default::default()).unwrap();
    let tr = integrate(&pair, &p, s0, 1.0, &NewtonConfig::default(), 3).unwrap();
    let ns: Vec<usize> = tr.states.iter().map(|s| s.n).collect();
    assert_eq!(ns, vec![0, 3, 6, 9, 10]);
    assert!((tr.last().t - 1.0).abs() < 1e-15);
}

#[test]
fn invalid_newton_config_is_rejected() {
    let cfg = NewtonConfig {
        max_iters: 0,
        ..NewtonConfig::default()
    };
    assert!(cfg.validate().is_err());
}
