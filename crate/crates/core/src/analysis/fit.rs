use crate::error::{GlmError, Result};

/// Unit roundoff of `f64`.
pub const UNIT_ROUNDOFF: f64 = f64::EPSILON / 2.0;
/// Errors below this multiple of `u · ‖reference‖` are excluded from fits.
pub const FLOOR_FACTOR: f64 = 100.0;
/// Local slopes further than this from the fitted slope raise the
/// floor-proximity flag.
const SLOPE_DRIFT: f64 = 0.25;

/// Least-squares slope of `log(error)` against `log(h)`.
pub fn observed_order(errors: &[f64], hs: &[f64]) -> Result<f64> {
    if errors.len() != hs.len() {
        return Err(GlmError::Precondition(format!(
            "{} errors for {} step sizes",
            errors.len(),
            hs.len()
        )));
    }
    if errors.len() < 3 {
        return Err(GlmError::TooFewRungs(errors.len()));
    }
    for (rung, (&e, &h)) in errors.iter().zip(hs).enumerate() {
        if !(e > 0.0 && e.is_finite()) {
            return Err(GlmError::NonPositiveError { rung, value: e });
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(GlmError::param("h", format!("rung {rung} has step size {h}")));
        }
    }
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    Ok(slope(&xs, &ys))
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Order fit over the rungs whose error lies above the roundoff floor.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    /// NaN when the fit is degenerate.
    pub order: f64,
    /// Indices of the rungs used.
    pub used: Vec<usize>,
    /// Errors excluded by the floor window, or local slopes drifting from
    /// the fitted slope by more than 0.25.
    pub floor_proximity: bool,
    /// Fewer than three rungs above the floor (e.g. an exactly solved
    /// problem); no slope is reported.
    pub degenerate: bool,
}

impl OrderFit {
    pub fn within(&self, target: f64, tol: f64) -> bool {
        !self.degenerate && (self.order - target).abs() <= tol
    }

    pub fn at_least(&self, target: f64) -> bool {
        !self.degenerate && self.order >= target
    }
}

/// Fits the rungs with `error >= floor`.
pub fn fit_order(hs: &[f64], errors: &[f64], floor: f64) -> Result<OrderFit> {
    if errors.iter().any(|e| e.is_nan() || *e < 0.0) {
        let (rung, value) = errors
            .iter()
            .copied()
            .enumerate()
            .find(|(_, e)| e.is_nan() || *e < 0.0)
            .expect("checked above");
        return Err(GlmError::NonPositiveError { rung, value });
    }
    let used: Vec<usize> = (0..errors.len()).filter(|&i| errors[i] >= floor && errors[i] > 0.0).collect();
    let excluded = used.len() < errors.len();
    if used.len() < 3 {
        return Ok(OrderFit {
            order: f64::NAN,
            used,
            floor_proximity: excluded,
            degenerate: true,
        });
    }
    let h: Vec<f64> = used.iter().map(|&i| hs[i]).collect();
    let e: Vec<f64> = used.iter().map(|&i| errors[i]).collect();
    let order = observed_order(&e, &h)?;
    let drift = h
        .windows(2)
        .zip(e.windows(2))
        .map(|(hw, ew)| (ew[0] / ew[1]).ln() / (hw[0] / hw[1]).ln())
        .any(|local| (local - order).abs() > SLOPE_DRIFT);
    Ok(OrderFit {
        order,
        used,
        floor_proximity: excluded || drift,
        degenerate: false,
    })
}
