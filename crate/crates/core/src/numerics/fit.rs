use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Ordinary least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_sse: f64,
}

impl LinearFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Result of fitting `a·exp(-t/τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub a: f64,
    pub tau: f64,
    pub residual_sse: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ExpFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.a * (-t / self.tau).exp()
    }
}

/// Levenberg–Marquardt schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub lambda0: f64,
    /// Damping multiplier on a rejected step (and divisor on an accepted one).
    pub lambda_factor: f64,
    pub max_iterations: usize,
    /// Relative SSE change below which an accepted step counts as converged.
    pub tol: f64,
    pub tau_min: f64,
    /// Default τ₀ when no initial guess is supplied.
    pub tau0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            lambda0: 1e-3,
            lambda_factor: 10.0,
            max_iterations: 200,
            tol: 1e-10,
            tau_min: 1e-3,
            tau0: 5.0,
        }
    }
}

// Past this the step is numerically zero; treat it as a stall at the optimum.
const LAMBDA_MAX: f64 = 1e16;

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit, NumericsError> {
    if xs.len() != ys.len() {
        return Err(NumericsError::InvalidInput(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(NumericsError::DegenerateFit("need at least two points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(NumericsError::InvalidInput("non-finite value".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(NumericsError::DegenerateFit("all x values identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_sse = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    Ok(LinearFit {
        slope,
        intercept,
        residual_sse,
    })
}

/// Fits `y ≈ a·exp(-t/τ)` with the default [`LmOptions`].
///
/// `init` defaults to `(y at the smallest t, 5.0)`.
pub fn lm_fit_exponential(
    ts: &[f64],
    ys: &[f64],
    init: Option<(f64, f64)>,
) -> Result<ExpFit, NumericsError> {
    lm_fit_exponential_with(ts, ys, init, &LmOptions::default())
}

pub fn lm_fit_exponential_with(
    ts: &[f64],
    ys: &[f64],
    init: Option<(f64, f64)>,
    opts: &LmOptions,
) -> Result<ExpFit, NumericsError> {
    if ts.len() != ys.len() {
        return Err(NumericsError::InvalidInput(format!(
            "length mismatch: {} vs {}",
            ts.len(),
            ys.len()
        )));
    }
    if ts.len() < 3 {
        return Err(NumericsError::InvalidInput("need at least three points".into()));
    }
    if ts.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(NumericsError::InvalidInput("non-finite value".into()));
    }
    if ts.iter().any(|&t| t <= 0.0) {
        return Err(NumericsError::InvalidInput("lags must be strictly positive".into()));
    }

    let (mut a, mut tau) = init.unwrap_or_else(|| {
        let first = ts
            .iter()
            .zip(ys)
            .min_by(|p, q| p.0.total_cmp(q.0))
            .map(|(_, &y)| y)
            .unwrap_or(0.0);
        (first, opts.tau0)
    });
    if !(a.is_finite() && tau.is_finite()) {
        return Err(NumericsError::InvalidInput("non-finite initial guess".into()));
    }
    tau = tau.max(opts.tau_min);

    let sse_of = |a: f64, tau: f64| -> f64 {
        ts.iter()
            .zip(ys)
            .map(|(&t, &y)| {
                let r = y - a * (-t / tau).exp();
                r * r
            })
            .sum()
    };

    let mut sse = sse_of(a, tau);
    let mut lambda = opts.lambda0;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iterations {
        if sse == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;

        // Normal equations for the 2-parameter model.
        let (mut jaa, mut jat, mut jtt, mut ga, mut gt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&t, &y) in ts.iter().zip(ys) {
            let e = (-t / tau).exp();
            let da = e;
            let dt = a * e * t / (tau * tau);
            let r = y - a * e;
            jaa += da * da;
            jat += da * dt;
            jtt += dt * dt;
            ga += da * r;
            gt += dt * r;
        }

        loop {
            let daa = if jaa > 0.0 { jaa } else { 1.0 };
            let dtt = if jtt > 0.0 { jtt } else { 1.0 };
            let m00 = jaa + lambda * daa;
            let m11 = jtt + lambda * dtt;
            let det = m00 * m11 - jat * jat;
            if det.is_finite() && det > 0.0 {
                let step_a = (m11 * ga - jat * gt) / det;
                let step_t = (m00 * gt - jat * ga) / det;
                let a_new = a + step_a;
                let tau_new = (tau + step_t).max(opts.tau_min);
                let sse_new = sse_of(a_new, tau_new);
                if sse_new.is_finite() && sse_new < sse {
                    let rel = (sse - sse_new) / sse;
                    a = a_new;
                    tau = tau_new;
                    sse = sse_new;
                    lambda /= opts.lambda_factor;
                    if rel < opts.tol {
                        converged = true;
                        break 'outer;
                    }
                    continue 'outer;
                }
            }
            lambda *= opts.lambda_factor;
            if lambda > LAMBDA_MAX {
                // No damped step reduces the SSE: the relative change is zero.
                converged = true;
                break 'outer;
            }
        }
    }

    let y_scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    let amplitude_lost = a.abs() <= 1e-12 * y_scale.max(f64::MIN_POSITIVE) || y_scale == 0.0;
    if tau <= opts.tau_min || amplitude_lost {
        converged = false;
    }

    Ok(ExpFit {
        a,
        tau,
        residual_sse: sse,
        converged,
        iterations,
    })
}
