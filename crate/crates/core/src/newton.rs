//! Score by the Fisher identity, numerical observed information,
//! Newton-Raphson refinement and standard errors.
//!
//! Everything works on the unconstrained packed vector; estimates and
//! standard errors are reported on the constrained scale via the delta
//! method.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::Dataset;
use crate::em::{e_pass, em_step, keep_for, CellSource, PosteriorStorage};
use crate::error::{MlarError, Result};
use crate::likelihood::loglik_at;
use crate::model::ModelSpec;
use crate::objective::{RespLayout, ResponseObjective};
use crate::optim::{max_abs, solve_pd_with_ridge, Need};
use crate::par;
use crate::params::{ParamLayout, Parameters};
use crate::quadrature::{transition_objective, QuadratureGrid};

#[derive(Debug, Clone)]
pub struct Score {
    pub loglik: f64,
    /// Gradient of the log-likelihood in the packed coordinates.
    pub grad: Vec<f64>,
}

/// Gradient of the log-likelihood, computed as the gradient of the expected
/// complete-data log-likelihood at the same parameter value.
pub fn score(spec: &ModelSpec, data: &Dataset, params: &Parameters) -> Result<Score> {
    let lay = ParamLayout::new(spec);
    let packed = params.pack(spec)?;
    let grid = QuadratureGrid::new(spec.q, spec.knot_bound, &params.rho)?;
    let post = e_pass(spec, data, params, &grid, keep_for(PosteriorStorage::Auto, spec, data))?;
    let mut grad = vec![0.0; lay.len()];

    let n_resp = lay.n_response();
    let source = CellSource { spec, data, params, grid: &grid };
    let obj = ResponseObjective {
        family: spec.family,
        data,
        knots: &grid.knots,
        weights: post.weights(&source),
        layout: RespLayout::for_spec(spec),
    };
    let resp = obj.eval(&packed[..n_resp], Need::Gradient)?;
    grad[..n_resp].copy_from_slice(&resp.grad);

    for (h, f) in post.trans_suff.iter().enumerate() {
        let rho = params.rho[h];
        let (_, d) = transition_objective(f, &grid.knots, rho)?;
        grad[lay.rho() + h] = (1.0 - rho * rho) * d;
    }

    let n = data.n() as f64;
    for h in 1..lay.k {
        let w: f64 = post.w_hat.column(h).sum();
        grad[lay.pi() + h - 1] = w - n * params.pi[h];
    }
    Ok(Score { loglik: post.loglik, grad })
}

/// Central-difference Jacobian of the score, symmetrized.
/// `rel_step` scales the step as `rel_step * (1 + |theta_j|)`.
pub fn observed_info(spec: &ModelSpec, data: &Dataset, params: &Parameters, rel_step: f64) -> Result<DMatrix<f64>> {
    let theta = params.pack(spec)?;
    let d = theta.len();
    let columns = par::map_collect(d, |j| -> Result<Vec<f64>> {
        let h = rel_step * (1.0 + theta[j].abs());
        let at = |delta: f64| -> Result<Vec<f64>> {
            let mut th = theta.clone();
            th[j] += delta;
            Ok(score(spec, data, &Parameters::unpack(&th, spec)?)?.grad)
        };
        let plus = at(h)?;
        let minus = at(-h)?;
        Ok(plus.iter().zip(&minus).map(|(a, b)| -(a - b) / (2.0 * h)).collect())
    });
    let mut info = DMatrix::zeros(d, d);
    for (j, col) in columns.into_iter().enumerate() {
        for (r, v) in col?.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(MlarError::NonFinite { index: j });
            }
            info[(r, j)] = v;
        }
    }
    Ok((&info + info.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    #[serde(rename = "EM")]
    Em,
    #[serde(rename = "NR")]
    Nr,
    #[serde(rename = "NR-halved")]
    NrHalved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: StepKind,
    pub loglik: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct NrControls {
    pub max_iter: usize,
    /// Stop when the score max-norm falls below this.
    pub score_tol: f64,
    pub max_halvings: usize,
    /// Relative finite-difference step of the observed information.
    pub fd_step: f64,
}

impl Default for NrControls {
    fn default() -> Self {
        NrControls { max_iter: 100, score_tol: 1e-5, max_halvings: 10, fd_step: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct NrOutcome {
    pub params: Parameters,
    pub loglik: f64,
    pub score: Vec<f64>,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Accepted Newton steps (EM fallbacks not counted).
    pub nr_steps: usize,
    pub em_fallbacks: usize,
    pub converged: bool,
    pub ridged: bool,
}

/// Newton-Raphson ascent `theta += J^-1 s` with step halving; after
/// `max_halvings` failed halvings a single EM iteration is taken instead.
pub fn nr_fit(spec: &ModelSpec, data: &Dataset, start: &Parameters, ctl: &NrControls) -> Result<NrOutcome> {
    let mut params = start.clone();
    let mut out = NrOutcome {
        params: params.clone(),
        loglik: f64::NEG_INFINITY,
        score: Vec::new(),
        trajectory: Vec::new(),
        nr_steps: 0,
        em_fallbacks: 0,
        converged: false,
        ridged: false,
    };
    for _ in 0..ctl.max_iter {
        let s = score(spec, data, &params)?;
        out.loglik = s.loglik;
        out.score = s.grad;
        if max_abs(&out.score) < ctl.score_tol {
            out.converged = true;
            break;
        }
        let info = observed_info(spec, data, &params, ctl.fd_step)?;
        let (dir, ridged) = solve_pd_with_ridge(&info, &out.score)?;
        out.ridged |= ridged;
        let theta = params.pack(spec)?;
        let mut step = 1.0;
        let mut accepted = None;
        for halving in 0..=ctl.max_halvings {
            let trial: Vec<f64> = theta.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            if let Ok(cand) = Parameters::unpack(&trial, spec) {
                if let Ok(ll) = loglik_at(spec, data, &cand) {
                    if ll >= s.loglik {
                        let kind = if halving == 0 { StepKind::Nr } else { StepKind::NrHalved };
                        accepted = Some((cand, ll, kind));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, ll, kind)) => {
                params = cand;
                out.nr_steps += 1;
                out.trajectory.push(TrajectoryPoint { step: kind, loglik: ll });
            }
            None => {
                params = em_step(spec, data, &params)?;
                out.em_fallbacks += 1;
                let ll = loglik_at(spec, data, &params)?;
                out.trajectory.push(TrajectoryPoint { step: StepKind::Em, loglik: ll });
            }
        }
    }
    if !out.converged {
        let s = score(spec, data, &params)?;
        out.loglik = s.loglik;
        out.converged = max_abs(&s.grad) < ctl.score_tol;
        out.score = s.grad;
    }
    out.params = params;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    /// Constrained-scale estimates in [`Parameters::named_values`] order.
    pub estimates: Vec<Estimate>,
    pub se_log_sigma: f64,
    /// Delta-method covariance on the constrained scale.
    pub covariance: Vec<Vec<f64>>,
}

/// Jacobian of the constrained reported values with respect to the packed
/// coordinates; rows follow [`Parameters::named_values`].
pub fn constrained_jacobian(spec: &ModelSpec, params: &Parameters) -> Result<DMatrix<f64>> {
    let lay = ParamLayout::new(spec);
    let theta = params.pack(spec)?;
    let d = lay.len();
    let rows = d + 1;
    let mut g = DMatrix::zeros(rows, d);
    let mut r = 0;
    for j in 0..lay.n_cut {
        g[(r, 0)] = 1.0;
        if lay.monotone_cut {
            for l in 1..=j {
                g[(r, l)] = -theta[l].exp();
            }
        } else {
            g[(r, j)] = 1.0;
        }
        r += 1;
    }
    for j in 0..lay.p {
        g[(r, lay.beta() + j)] = 1.0;
        r += 1;
    }
    g[(r, lay.log_sigma())] = params.sigma;
    r += 1;
    if let (Some(i), Some(v)) = (lay.log_eps(), params.sigma_eps2) {
        g[(r, i)] = v;
        r += 1;
    }
    for h in 1..lay.k {
        g[(r, lay.xi() + h - 1)] = 1.0;
        r += 1;
    }
    for h in 0..lay.k {
        g[(r, lay.rho() + h)] = 1.0 - params.rho[h] * params.rho[h];
        r += 1;
    }
    for h in 0..lay.k {
        for g_idx in 1..lay.k {
            let delta = if h == g_idx { 1.0 } else { 0.0 };
            g[(r, lay.pi() + g_idx - 1)] = params.pi[h] * (delta - params.pi[g_idx]);
        }
        r += 1;
    }
    debug_assert_eq!(r, rows);
    Ok(g)
}

/// Invert the observed information and map to the constrained scale.
/// Fails when `info` is not positive definite.
pub fn standard_errors(spec: &ModelSpec, info: &DMatrix<f64>, params: &Parameters) -> Result<StandardErrors> {
    let d = info.nrows();
    let chol = info
        .clone()
        .cholesky()
        .ok_or_else(|| MlarError::Numerical("observed information is not positive definite".into()))?;
    let cov_u = chol.inverse();
    let g = constrained_jacobian(spec, params)?;
    if g.ncols() != d {
        return Err(MlarError::Dimension { expected: g.ncols(), got: d });
    }
    let cov_c = &g * &cov_u * g.transpose();
    let estimates = params
        .named_values()
        .into_iter()
        .enumerate()
        .map(|(r, (name, estimate))| Estimate { name, estimate, se: cov_c[(r, r)].max(0.0).sqrt() })
        .collect();
    let ls = ParamLayout::new(spec).log_sigma();
    let covariance = (0..cov_c.nrows()).map(|r| cov_c.row(r).iter().copied().collect()).collect();
    Ok(StandardErrors { estimates, se_log_sigma: cov_u[(ls, ls)].max(0.0).sqrt(), covariance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoDiagnostics {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Ratio of extreme absolute eigenvalues; infinite when singular.
    pub condition_number: f64,
}

pub fn info_diagnostics(info: &DMatrix<f64>) -> InfoDiagnostics {
    let eig = SymmetricEigen::new(info.clone()).eigenvalues;
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let abs_min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let abs_max = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let condition_number = if abs_min > 0.0 { abs_max / abs_min } else { f64::INFINITY };
    InfoDiagnostics { min_eigenvalue: min, max_eigenvalue: max, condition_number }
}

/// Solve `info * x = v`; used by Wald-type checks.
pub fn info_solve(info: &DMatrix<f64>, v: &[f64]) -> Option<Vec<f64>> {
    let ch = info.clone().cholesky()?;
    Some(ch.solve(&DVector::from_column_slice(v)).as_slice().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTest {
    pub statistic: f64,
    pub df: usize,
    /// Upper tail of the chi-squared reference; meaningful only under the
    /// usual regularity conditions.
    pub p_value: f64,
}

/// `2 (l_alt - l_null)` with `df = d_alt - d_null`.
pub fn likelihood_ratio_test(loglik_null: f64, loglik_alt: f64, n_params_null: usize, n_params_alt: usize) -> Result<LrTest> {
    if n_params_alt <= n_params_null {
        return Err(MlarError::InvalidSpec("the alternative model must have more parameters".into()));
    }
    let statistic = 2.0 * (loglik_alt - loglik_null);
    let df = n_params_alt - n_params_null;
    let chi = ChiSquared::new(df as f64).map_err(|e| MlarError::Numerical(e.to_string()))?;
    let p_value = if statistic <= 0.0 { 1.0 } else { chi.sf(statistic) };
    Ok(LrTest { statistic, df, p_value })
}
