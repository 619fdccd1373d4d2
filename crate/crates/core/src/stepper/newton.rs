use nalgebra::{DMatrix, DVector};

use super::{JacobianRefresh, NewtonConfig};
use crate::error::{GlmError, Result};

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    /// Number of Newton updates applied (at least 1).
    pub iterations: usize,
    /// Max norm of the residual at `x`.
    pub residual_norm: f64,
}

const DIVERGENCE_STREAK: usize = 3;

/// Newton's method for `F(x) = 0`.
///
/// Converges once `‖F(x)‖∞ <= abs_tol + rel_tol * scale(x)`, or once the
/// update is at the roundoff level of `scale(x)`. At least one update is
/// always applied. Three consecutive residual increases count as divergence.
pub fn newton_solve<F, J, S>(
    x0: DVector<f64>,
    residual: F,
    jacobian: J,
    scale: S,
    cfg: &NewtonConfig,
    stage: usize,
) -> Result<NewtonOutcome>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
    S: Fn(&DVector<f64>) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut r = residual(&x);
    let mut r_norm = r.amax();
    let mut lu = None;
    let mut streak = 0;
    for it in 1..=cfg.max_iters {
        if lu.is_none() || cfg.jacobian_refresh == JacobianRefresh::EveryIteration {
            let jac = jacobian(&x);
            if jac.nrows() != n || jac.ncols() != n || jac.iter().any(|v| !v.is_finite()) {
                return Err(GlmError::SingularStageJacobian { stage });
            }
            let f = jac.lu();
            let u = f.u();
            let big = u.amax();
            let small = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
            if n > 0 && !(small > 1e-14 * big.max(f64::MIN_POSITIVE)) {
                return Err(GlmError::SingularStageJacobian { stage });
            }
            lu = Some(f);
        }
        let dx = lu
            .as_ref()
            .and_then(|f| f.solve(&(-&r)))
            .ok_or(GlmError::SingularStageJacobian { stage })?;
        x += &dx;
        let r_new = residual(&x);
        let r_new_norm = r_new.amax();
        if !r_new_norm.is_finite() {
            return Err(GlmError::NewtonDiverged {
                iterations: it,
                residual: r_new_norm,
            });
        }
        let sc = scale(&x);
        let stagnated = dx.amax() <= 8.0 * f64::EPSILON * (1.0 + sc);
        if r_new_norm <= cfg.abs_tol + cfg.rel_tol * sc || stagnated {
            return Ok(NewtonOutcome {
                x,
                iterations: it,
                residual_norm: r_new_norm,
            });
        }
        streak = if r_new_norm > r_norm { streak + 1 } else { 0 };
        if streak >= DIVERGENCE_STREAK {
            return Err(GlmError::NewtonDiverged {
                iterations: it,
                residual: r_new_norm,
            });
        }
        r = r_new;
        r_norm = r_new_norm;
    }
    Err(GlmError::NewtonMaxIterations {
        iterations: cfg.max_iters,
        residual: r_norm,
    })
}
