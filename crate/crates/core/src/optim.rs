//! Small optimizers: damped Newton ascent and 1-D bisection on a derivative.

use nalgebra::{DMatrix, DVector};

use crate::error::{MlarError, Result};

/// What an objective evaluation has to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Need {
    Value,
    Gradient,
    Hessian,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonControls {
    pub max_iter: usize,
    /// Stop when the gradient max-norm falls below this, or when full Newton
    /// steps no longer change the objective beyond rounding.
    pub grad_tol: f64,
    pub max_halvings: usize,
}

impl Default for NewtonControls {
    fn default() -> Self {
        NewtonControls { max_iter: 50, grad_tol: 1e-7, max_halvings: 30 }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// A ridge had to be added to the negated Hessian at least once.
    pub ridged: bool,
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solve `a * x = b` for symmetric `a` that should be positive definite,
/// adding `lambda * I` until a Cholesky factorization succeeds.
/// Returns the solution and whether a ridge was needed.
pub fn solve_pd_with_ridge(a: &DMatrix<f64>, b: &[f64]) -> Result<(Vec<f64>, bool)> {
    let rhs = DVector::from_column_slice(b);
    if let Some(ch) = a.clone().cholesky() {
        return Ok((ch.solve(&rhs).as_slice().to_vec(), false));
    }
    let scale = a.diagonal().iter().fold(1.0_f64, |m, d| m.max(d.abs()));
    let mut lambda = 1e-8 * scale;
    for _ in 0..40 {
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[(i, i)] += lambda;
        }
        if let Some(ch) = shifted.cholesky() {
            return Ok((ch.solve(&rhs).as_slice().to_vec(), true));
        }
        lambda *= 10.0;
    }
    Err(MlarError::Numerical("could not regularize a singular system".into()))
}

const DECREMENT_TOL: f64 = 1e-12;
const MAX_NOISE_STEPS: usize = 3;

/// Newton ascent with step halving: every accepted step is non-decreasing,
/// up to the rounding level of the objective.
pub fn newton_maximize<F>(f: F, x0: &[f64], ctl: &NewtonControls) -> Result<NewtonOutcome>
where
    F: Fn(&[f64], Need) -> Result<Evaluation>,
{
    let mut x = x0.to_vec();
    let mut cur = f(&x, Need::Hessian)?;
    let mut ridged = false;
    let mut noise_steps = 0;
    for iter in 0..ctl.max_iter {
        let gnorm = max_abs(&cur.grad);
        if gnorm < ctl.grad_tol {
            return Ok(NewtonOutcome { x, value: cur.value, grad_norm: gnorm, iterations: iter, converged: true, ridged });
        }
        let hess = cur.hess.as_ref().expect("hessian requested");
        let neg = -hess;
        let (dir, r) = solve_pd_with_ridge(&neg, &cur.grad)?;
        ridged |= r;
        // Predicted gain at the rounding level of the objective: the value
        // can no longer arbitrate, so trust the quadratic model and take the
        // full step, a few times at most.
        let decrement: f64 = cur.grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let noise = DECREMENT_TOL * (1.0 + cur.value.abs());
        if !r && decrement.abs() < noise {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + d).collect();
            match f(&trial, Need::Hessian) {
                Ok(ev) if noise_steps < MAX_NOISE_STEPS && ev.value.is_finite() && ev.value >= cur.value - noise => {
                    x = trial;
                    cur = ev;
                    noise_steps += 1;
                    continue;
                }
                _ => {
                    return Ok(NewtonOutcome { x, value: cur.value, grad_norm: gnorm, iterations: iter, converged: true, ridged });
                }
            }
        }
        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..=ctl.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            if let Ok(ev) = f(&trial, Need::Value) {
                if ev.value.is_finite() && ev.value >= cur.value {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some(trial) => {
                x = trial;
                cur = f(&x, Need::Hessian)?;
            }
            None => {
                let gnorm = max_abs(&cur.grad);
                return Ok(NewtonOutcome { x, value: cur.value, grad_norm: gnorm, iterations: iter, converged: false, ridged });
            }
        }
    }
    let gnorm = max_abs(&cur.grad);
    Ok(NewtonOutcome {
        x,
        value: cur.value,
        grad_norm: gnorm,
        iterations: ctl.max_iter,
        converged: gnorm < ctl.grad_tol,
        ridged,
    })
}

/// Maximize a 1-D function on `[lo, hi]` given its derivative, by bisection
/// on the sign change of the derivative. Boundary maxima are returned as-is.
pub fn bisect_max(deriv: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let d_hi = deriv(hi)?;
    if d_hi >= 0.0 {
        return Ok(hi);
    }
    let d_lo = deriv(lo)?;
    if d_lo <= 0.0 {
        return Ok(lo);
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        let d = deriv(mid)?;
        if d > 0.0 {
            a = mid;
        } else if d < 0.0 {
            b = mid;
        } else {
            return Ok(mid);
        }
    }
    Ok(0.5 * (a + b))
}
