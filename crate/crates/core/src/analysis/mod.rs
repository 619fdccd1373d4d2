//! Observed orders, stiffness and ε sweeps, and the error recurrence.

mod convergence;
mod fit;
mod recurrence;
mod sweeps;

pub use convergence::{
    run_convergence_study, ConvergenceReport, ReferenceKind, RungResult, StudyOptions,
};
pub use fit::{fit_order, observed_order, OrderFit, FLOOR_FACTOR, UNIT_ROUNDOFF};
pub use recurrence::{
    simulate_error_recurrence, Noise, RecurrenceCase, RecurrenceReport, RecurrenceSpec,
};
pub use sweeps::{epsilon_sweep, stiffness_sweep, EpsilonRow, EpsilonSweep, StiffnessRow, StiffnessSweep};

/// Full round-trip float formatting used in every CSV.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Thread count for rung-level parallelism: `GLM_THREADS` when it holds a
/// positive integer, otherwise the rayon default.
pub fn rung_threads() -> usize {
    std::env::var("GLM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0)
}

/// Runs `f` over `items` on a pool capped by [`rung_threads`], keeping the
/// input order in the output.
pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let run = || items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    match rayon::ThreadPoolBuilder::new().num_threads(rung_threads()).build() {
        Ok(pool) => pool.install(run),
        Err(_) => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}
