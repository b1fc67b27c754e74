//! Conditional response law `p(y | component h, knot nu, x)` and its derivatives.
//!
//! The linear predictor is `eta = xi_h + nu * sigma + x'beta`. Threshold
//! families (binary and ordinal) use cumulative links with
//! `P(y >= j) = F(mu_j + eta)`, so the probability of category `c` is
//! `F(A) - F(B)` with `A = mu_c + eta` and `B = mu_{c+1} + eta`; the
//! boundary terms `mu_1 = +inf`, `mu_{J+1} = -inf` are represented by `None`.
//! The continuous family is `N(mu + eta, sigma_eps^2)`.

use ndarray::{Array2, ArrayView1};
use statrs::function::erf::erfc;

use crate::error::{MlarError, Result};
use crate::model::{Link, ResponseFamily};
use crate::params::Parameters;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Value and first/second derivatives of a log-probability with respect to
/// its two scalar arguments.
///
/// Threshold families: arguments are `(A, B)`. Continuous family: the mean
/// and the log of the error variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Kernel {
    pub logp: f64,
    pub da: f64,
    pub db: f64,
    pub daa: f64,
    pub dab: f64,
    pub dbb: f64,
}

/// `ln L(x)` for the logistic cdf L.
#[inline]
pub fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln Phi(x)` accurate in both tails.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-0.5 * erfc(x / std::f64::consts::SQRT_2)).ln_1p()
    } else if x > -35.0 {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic series of the Mills ratio.
        let z = 1.0 / (x * x);
        let series = 1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z * (1.0 - 9.0 * z))));
        -0.5 * x * x - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

#[inline]
fn log_cdf(link: Link, x: f64) -> f64 {
    match link {
        Link::Logit => log_logistic(x),
        Link::Probit => log_norm_cdf(x),
    }
}

#[inline]
fn log_pdf(link: Link, x: f64) -> f64 {
    match link {
        Link::Logit => log_logistic(x) + log_logistic(-x),
        Link::Probit => -0.5 * x * x - LN_SQRT_2PI,
    }
}

/// `f'(x) / f(x)` for the error density f.
#[inline]
fn score_of_pdf(link: Link, x: f64) -> f64 {
    match link {
        Link::Logit => -(0.5 * x).tanh(),
        Link::Probit => -x,
    }
}

/// `ln(1 - exp(-d))` for `d >= 0`.
#[inline]
fn log1mexp(d: f64) -> f64 {
    if d > std::f64::consts::LN_2 {
        (-(-d).exp()).ln_1p()
    } else {
        (-(-d).exp_m1()).ln()
    }
}

/// `ln(F(A) - F(B))` with `A >= B`; `None` stands for the infinite boundary.
pub fn log_interval_prob(link: Link, a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (None, None) => 0.0,
        (Some(a), None) => log_cdf(link, a),
        (None, Some(b)) => log_cdf(link, -b),
        (Some(a), Some(b)) => {
            if a <= b {
                return f64::NEG_INFINITY;
            }
            match link {
                // L(A) - L(B) = L(A) L(-B) (1 - e^{B-A})
                Link::Logit => log_logistic(a) + log_logistic(-b) + log1mexp(a - b),
                Link::Probit => {
                    if b >= 0.0 {
                        let hi = log_norm_cdf(-b);
                        hi + log1mexp(hi - log_norm_cdf(-a))
                    } else if a <= 0.0 {
                        let hi = log_norm_cdf(a);
                        hi + log1mexp(hi - log_norm_cdf(b))
                    } else {
                        let upper_tail = 0.5 * erfc(a / std::f64::consts::SQRT_2);
                        let lower_tail = 0.5 * erfc(-b / std::f64::consts::SQRT_2);
                        (1.0 - upper_tail - lower_tail).ln()
                    }
                }
            }
        }
    }
}

/// `(ln L(x), ln(1 - L(x)), L(x))` from a single exponential.
#[inline]
fn logistic_parts(x: f64) -> (f64, f64, f64) {
    let e = (-x.abs()).exp();
    let l1 = e.ln_1p();
    if x >= 0.0 {
        (-l1, -x - l1, 1.0 / (1.0 + e))
    } else {
        (x - l1, -l1, e / (1.0 + e))
    }
}

fn logit_interval_kernel(a: Option<f64>, b: Option<f64>) -> Kernel {
    let pa = a.map(logistic_parts);
    let pb = b.map(logistic_parts);
    let logp = match (a, b, pa, pb) {
        (None, None, _, _) => 0.0,
        (Some(_), None, Some((la, _, _)), _) => la,
        (None, Some(_), _, Some((_, mb, _))) => mb,
        (Some(a), Some(b), Some((la, _, _)), Some((_, mb, _))) => {
            if a <= b {
                f64::NEG_INFINITY
            } else {
                la + mb + log1mexp(a - b)
            }
        }
        _ => unreachable!(),
    };
    let mut k = Kernel { logp, ..Kernel::default() };
    if let Some((la, ma, l)) = pa {
        let fa = (la + ma - logp).exp();
        k.da = fa;
        k.daa = fa * (1.0 - 2.0 * l) - fa * fa;
    }
    if let Some((lb, mb, l)) = pb {
        let fb = -(lb + mb - logp).exp();
        k.db = fb;
        k.dbb = fb * (1.0 - 2.0 * l) - fb * fb;
    }
    k.dab = -k.da * k.db;
    k
}

/// Log-probability of the interval `(B, A]` with derivatives in `A` and `B`.
pub fn interval_kernel(link: Link, a: Option<f64>, b: Option<f64>) -> Kernel {
    if link == Link::Logit {
        return logit_interval_kernel(a, b);
    }
    let logp = log_interval_prob(link, a, b);
    let mut k = Kernel { logp, ..Kernel::default() };
    if let Some(a) = a {
        let fa = (log_pdf(link, a) - logp).exp();
        k.da = fa;
        k.daa = fa * score_of_pdf(link, a) - fa * fa;
    }
    if let Some(b) = b {
        let fb = -(log_pdf(link, b) - logp).exp();
        k.db = fb;
        k.dbb = fb * score_of_pdf(link, b) - fb * fb;
    }
    k.dab = -k.da * k.db;
    k
}

/// Normal log-density of `y` with the given mean and log-variance.
#[inline]
pub fn gaussian_kernel(y: f64, mean: f64, log_var: f64) -> Kernel {
    let prec = (-log_var).exp();
    let r = y - mean;
    let half_r2p = 0.5 * r * r * prec;
    Kernel {
        logp: -LN_SQRT_2PI - 0.5 * log_var - half_r2p,
        da: r * prec,
        db: -0.5 + half_r2p,
        daa: -prec,
        dab: -r * prec,
        dbb: -half_r2p,
    }
}

/// Threshold arguments for category `c` (1-based): returns
/// `(cut index for A, cut index for B)`.
#[inline]
pub(crate) fn category_cuts(c: usize, n_categories: usize) -> (Option<usize>, Option<usize>) {
    let a = (c >= 2).then(|| c - 2);
    let b = (c < n_categories).then(|| c - 1);
    (a, b)
}

/// Map a raw response value to a 1-based category for threshold families.
#[inline]
pub(crate) fn category_of(family: ResponseFamily, y: f64) -> usize {
    if family.is_binary() {
        y as usize + 1
    } else {
        y as usize
    }
}

/// Per-cell kernel for a given linear predictor.
///
/// `cut` are the constrained intercepts; `log_eps` is the log error variance
/// (continuous family only). For the continuous family argument A is the
/// mean and B the log-variance.
#[inline]
pub(crate) fn cell_kernel(family: ResponseFamily, cut: &[f64], log_eps: f64, y: f64, eta: f64) -> Kernel {
    match family.link() {
        None => gaussian_kernel(y, cut[0] + eta, log_eps),
        Some(link) => {
            let c = category_of(family, y);
            let (ia, ib) = category_cuts(c, family.categories());
            interval_kernel(link, ia.map(|j| cut[j] + eta), ib.map(|j| cut[j] + eta))
        }
    }
}

/// Log-probability only; the hot path of the forward recursion.
#[inline]
pub(crate) fn cell_logprob(family: ResponseFamily, cut: &[f64], log_eps: f64, y: f64, eta: f64) -> f64 {
    match family.link() {
        None => {
            let r = y - cut[0] - eta;
            -LN_SQRT_2PI - 0.5 * log_eps - 0.5 * r * r * (-log_eps).exp()
        }
        Some(link) => {
            let c = category_of(family, y);
            let (ia, ib) = category_cuts(c, family.categories());
            log_interval_prob(link, ia.map(|j| cut[j] + eta), ib.map(|j| cut[j] + eta))
        }
    }
}

/// `xi_h + nu * sigma + x'beta`.
#[inline]
pub fn linear_predictor(params: &Parameters, h: usize, nu: f64, x: ArrayView1<f64>) -> f64 {
    params.xi[h] + nu * params.sigma + x.dot(&ndarray::aview1(&params.beta))
}

fn check_response(family: ResponseFamily, y: f64) -> Result<()> {
    if !y.is_finite() {
        return Err(MlarError::InvalidParameters(format!("non-finite response {y}")));
    }
    if family.is_continuous() {
        return Ok(());
    }
    let (lo, hi) = if family.is_binary() { (0.0, 1.0) } else { (1.0, family.categories() as f64) };
    if y.fract() != 0.0 || y < lo || y > hi {
        return Err(MlarError::InvalidParameters(format!(
            "response {y} outside the categories of {}",
            family.name()
        )));
    }
    Ok(())
}

fn log_eps_of(params: &Parameters) -> f64 {
    params.sigma_eps2.map(f64::ln).unwrap_or(0.0)
}

/// `ln p(y | h, nu, x)`: log-probability for threshold families, log-density
/// for the continuous family.
pub fn cond_logprob(
    family: ResponseFamily,
    params: &Parameters,
    y: f64,
    h: usize,
    nu: f64,
    x: ArrayView1<f64>,
) -> Result<f64> {
    check_response(family, y)?;
    let eta = linear_predictor(params, h, nu, x);
    Ok(cell_logprob(family, &params.cut, log_eps_of(params), y, eta))
}

/// Gradient and Hessian of [`cond_logprob`] on the constrained scale.
///
/// Coordinate order: `cut` (all intercepts), `beta`, `xi_h`, `sigma`, and
/// finally `sigma_eps2` for the continuous family.
#[derive(Debug, Clone, PartialEq)]
pub struct CondDerivatives {
    pub logp: f64,
    pub grad: Vec<f64>,
    pub hess: Array2<f64>,
}

pub fn cond_score_hess(
    family: ResponseFamily,
    params: &Parameters,
    y: f64,
    h: usize,
    nu: f64,
    x: ArrayView1<f64>,
) -> Result<CondDerivatives> {
    check_response(family, y)?;
    let nc = params.cut.len();
    let p = params.beta.len();
    let i_xi = nc + p;
    let i_sigma = i_xi + 1;
    let d = i_sigma + 1 + usize::from(family.is_continuous());
    let eta = linear_predictor(params, h, nu, x);

    // gradient of eta
    let mut deta = vec![0.0; d];
    for (j, v) in x.iter().enumerate() {
        deta[nc + j] = *v;
    }
    deta[i_xi] = 1.0;
    deta[i_sigma] = nu;

    let mut grad_a = deta.clone();
    let mut grad_b = deta;
    let kern = match family.link() {
        None => {
            let v = params.sigma_eps2.unwrap_or(1.0);
            grad_a[0] += 1.0;
            // argument B is ln v; switch it to v below
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            grad_b[d - 1] = 1.0;
            let k = gaussian_kernel(y, params.cut[0] + eta, v.ln());
            // d/dv = (1/v) d/dlnv, d2/dv2 = (d2/dlnv2 - d/dlnv) / v^2
            Kernel {
                logp: k.logp,
                da: k.da,
                db: k.db / v,
                daa: k.daa,
                dab: k.dab / v,
                dbb: (k.dbb - k.db) / (v * v),
            }
        }
        Some(link) => {
            let c = category_of(family, y);
            let (ia, ib) = category_cuts(c, family.categories());
            if let Some(j) = ia {
                grad_a[j] += 1.0;
            } else {
                grad_a.iter_mut().for_each(|g| *g = 0.0);
            }
            if let Some(j) = ib {
                grad_b[j] += 1.0;
            } else {
                grad_b.iter_mut().for_each(|g| *g = 0.0);
            }
            interval_kernel(link, ia.map(|j| params.cut[j] + eta), ib.map(|j| params.cut[j] + eta))
        }
    };

    let grad: Vec<f64> = grad_a
        .iter()
        .zip(&grad_b)
        .map(|(ga, gb)| kern.da * ga + kern.db * gb)
        .collect();
    let hess = Array2::from_shape_fn((d, d), |(r, c)| {
        kern.daa * grad_a[r] * grad_a[c]
            + kern.dab * (grad_a[r] * grad_b[c] + grad_b[r] * grad_a[c])
            + kern.dbb * grad_b[r] * grad_b[c]
    });
    Ok(CondDerivatives { logp: kern.logp, grad, hess })
}
