//! Quadrature likelihood via the scaled forward recursion.
//!
//! For component `h` the T-dimensional latent integral becomes a hidden
//! Markov chain on the knots with initial law `w_init` and transition
//! matrix `w_trans[h]`. Forward variables are renormalized at every occasion
//! and the log normalizers accumulated, so long panels never underflow.

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{MlarError, Result};
use crate::model::ModelSpec;
use crate::par;
use crate::params::Parameters;
use crate::quadrature::QuadratureGrid;
use crate::response::cell_logprob;

/// Per-subject, per-component forward quantities.
#[derive(Debug, Clone)]
pub(crate) struct ForwardPass {
    /// Emissions `p(y_t | h, nu_m)` scaled by `exp(-emis_shift[t])`, `T x q` row-major.
    pub emis: Vec<f64>,
    /// Normalized forward variables, `T x q` row-major.
    pub alpha: Vec<f64>,
    /// Per-occasion normalizers of the scaled recursion.
    pub scale: Vec<f64>,
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// `log p^(h)(y_i | X_i)`, `n x k`.
    pub log_p_component: Array2<f64>,
    /// `log p(y_i | X_i)`, length n.
    pub log_p_manifest: Array1<f64>,
}

impl ForwardResult {
    pub fn total(&self) -> f64 {
        // ascending subject order
        self.log_p_manifest.iter().sum()
    }
}

/// `x_it' beta` for every occasion of subject `i`.
pub(crate) fn covariate_effects(data: &Dataset, params: &Parameters, i: usize) -> Vec<f64> {
    let beta = ndarray::aview1(&params.beta);
    (0..data.t()).map(|t| data.covariates(i, t).dot(&beta)).collect()
}

/// Fill `emis` with scaled emissions and return the log shifts.
pub(crate) fn emissions(
    spec: &ModelSpec,
    data: &Dataset,
    params: &Parameters,
    knots: &[f64],
    i: usize,
    h: usize,
    xb: &[f64],
    emis: &mut [f64],
) -> Result<Vec<f64>> {
    let q = knots.len();
    let log_eps = params.sigma_eps2.map(f64::ln).unwrap_or(0.0);
    let mut shift = Vec::with_capacity(data.t());
    for t in 0..data.t() {
        let y = data.y[[i, t]];
        let base = params.xi[h] + xb[t];
        let row = &mut emis[t * q..(t + 1) * q];
        let mut max = f64::NEG_INFINITY;
        for (e, &nu) in row.iter_mut().zip(knots) {
            *e = cell_logprob(spec.family, &params.cut, log_eps, y, base + nu * params.sigma);
            max = max.max(*e);
        }
        if !max.is_finite() {
            return Err(MlarError::Numerical(format!(
                "observation (subject {}, time {}) has zero probability at every knot",
                i + 1,
                t + 1
            )));
        }
        for e in row.iter_mut() {
            *e = (*e - max).exp();
        }
        shift.push(max);
    }
    Ok(shift)
}

pub(crate) fn forward_pass(
    spec: &ModelSpec,
    data: &Dataset,
    params: &Parameters,
    grid: &QuadratureGrid,
    i: usize,
    h: usize,
    xb: &[f64],
) -> Result<ForwardPass> {
    let q = grid.q();
    let n_t = data.t();
    let mut emis = vec![0.0; n_t * q];
    let shift = emissions(spec, data, params, &grid.knots, i, h, xb, &mut emis)?;
    let trans = grid.w_trans[h]
        .as_slice()
        .expect("transition matrices are standard layout");
    let mut alpha = vec![0.0; n_t * q];
    let mut scale = vec![0.0; n_t];
    let mut loglik = 0.0;

    for t in 0..n_t {
        let (done, rest) = alpha.split_at_mut(t * q);
        let cur = &mut rest[..q];
        if t == 0 {
            cur.copy_from_slice(&grid.w_init);
        } else {
            let prev = &done[(t - 1) * q..];
            cur.fill(0.0);
            for (m1, &a) in prev.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &trans[m1 * q..(m1 + 1) * q];
                for (c, &w) in cur.iter_mut().zip(row) {
                    *c += a * w;
                }
            }
        }
        let e = &emis[t * q..(t + 1) * q];
        let mut c = 0.0;
        for (a, &em) in cur.iter_mut().zip(e) {
            *a *= em;
            c += *a;
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(MlarError::Numerical(format!(
                "forward recursion degenerated at subject {}, time {}",
                i + 1,
                t + 1
            )));
        }
        let inv = 1.0 / c;
        cur.iter_mut().for_each(|a| *a *= inv);
        scale[t] = c;
        loglik += shift[t] + c.ln();
    }
    Ok(ForwardPass { emis, alpha, scale, loglik })
}

/// `log p^(h)(y_i | X_i)`.
pub fn component_loglik(
    spec: &ModelSpec,
    data: &Dataset,
    params: &Parameters,
    grid: &QuadratureGrid,
    i: usize,
    h: usize,
) -> Result<f64> {
    let xb = covariate_effects(data, params, i);
    Ok(forward_pass(spec, data, params, grid, i, h, &xb)?.loglik)
}

/// Log-sum-exp of `log pi_h + log p^(h)`.
pub(crate) fn mix_components(params: &Parameters, comp: &[f64]) -> f64 {
    let terms: Vec<f64> = params.pi.iter().zip(comp).map(|(p, c)| p.ln() + c).collect();
    log_sum_exp(&terms)
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log p(y_i | X_i) = log sum_h pi_h p^(h)(y_i | X_i)`.
pub fn manifest_loglik(
    spec: &ModelSpec,
    data: &Dataset,
    params: &Parameters,
    grid: &QuadratureGrid,
    i: usize,
) -> Result<f64> {
    let comp = subject_components(spec, data, params, grid, i)?;
    Ok(mix_components(params, &comp))
}

fn subject_components(
    spec: &ModelSpec,
    data: &Dataset,
    params: &Parameters,
    grid: &QuadratureGrid,
    i: usize,
) -> Result<Vec<f64>> {
    let xb = covariate_effects(data, params, i);
    (0..params.k())
        .map(|h| forward_pass(spec, data, params, grid, i, h, &xb).map(|f| f.loglik))
        .collect()
}

/// Component and manifest log-likelihoods for every subject.
pub fn forward_all(
    spec: &ModelSpec,
    data: &Dataset,
    params: &Parameters,
    grid: &QuadratureGrid,
) -> Result<ForwardResult> {
    check_grid(params, grid)?;
    let rows = par::map_collect(data.n(), |i| subject_components(spec, data, params, grid, i));
    let k = params.k();
    let mut log_p_component = Array2::zeros((data.n(), k));
    let mut log_p_manifest = Array1::zeros(data.n());
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        log_p_manifest[i] = mix_components(params, &row);
        for (h, v) in row.into_iter().enumerate() {
            log_p_component[[i, h]] = v;
        }
    }
    Ok(ForwardResult { log_p_component, log_p_manifest })
}

/// Total log-likelihood, reduced in a fixed subject order.
pub fn total_loglik(
    spec: &ModelSpec,
    data: &Dataset,
    params: &Parameters,
    grid: &QuadratureGrid,
) -> Result<f64> {
    check_grid(params, grid)?;
    let per_subject = par::map_collect(data.n(), |i| manifest_loglik(spec, data, params, grid, i));
    let mut total = 0.0;
    for v in per_subject {
        total += v?;
    }
    if !total.is_finite() {
        return Err(MlarError::Numerical("log-likelihood is not finite".into()));
    }
    Ok(total)
}

/// Build the grid for `params` and evaluate the log-likelihood.
pub fn loglik_at(spec: &ModelSpec, data: &Dataset, params: &Parameters) -> Result<f64> {
    let grid = QuadratureGrid::new(spec.q, spec.knot_bound, &params.rho)?;
    total_loglik(spec, data, params, &grid)
}

fn check_grid(params: &Parameters, grid: &QuadratureGrid) -> Result<()> {
    if grid.k() != params.k() {
        return Err(MlarError::Dimension { expected: params.k(), got: grid.k() });
    }
    Ok(())
}
