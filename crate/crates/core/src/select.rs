//! Choice of the number of quadrature points and of mixture components.
//!
//! q: refit at q0, q0 + step, ... (warm-started from the previous estimate)
//! and stop at the first q whose maximum log-likelihood differs from the
//! previous one by less than `tol` in absolute value.
//!
//! k: fit k = 1, 2, ... and stop at the first k whose predicted latent
//! surface correlates with that of k - 1 above `threshold`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::fit::{fit_model, FitOptions, FitResult, StartStrategy};
use crate::model::ModelSpec;
use crate::newton::{info_diagnostics, observed_info, standard_errors};
use crate::predict::{pearson, predict_alpha, PredictionSurface};

pub const DEFAULT_Q_STEP: usize = 10;
pub const DEFAULT_Q_TOL: f64 = 1e-3;
pub const DEFAULT_Q_MAX: usize = 101;
pub const DEFAULT_K_THRESHOLD: f64 = 0.99;
pub const DEFAULT_K_MAX: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QControls {
    pub q0: usize,
    pub step: usize,
    pub tol: f64,
    pub q_max: usize,
}

impl Default for QControls {
    fn default() -> Self {
        QControls { q0: crate::model::DEFAULT_Q, step: DEFAULT_Q_STEP, tol: DEFAULT_Q_TOL, q_max: DEFAULT_Q_MAX }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KControls {
    pub threshold: f64,
    pub k_max: usize,
}

impl Default for KControls {
    fn default() -> Self {
        KControls { threshold: DEFAULT_K_THRESHOLD, k_max: DEFAULT_K_MAX }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QStep {
    pub q: usize,
    pub loglik: f64,
    /// `loglik - previous loglik`; absent for the first entry.
    pub difference: Option<f64>,
}

/// Differences column of a q path.
pub fn q_path(points: &[(usize, f64)]) -> Vec<QStep> {
    points
        .iter()
        .enumerate()
        .map(|(j, &(q, loglik))| QStep { q, loglik, difference: (j > 0).then(|| loglik - points[j - 1].1) })
        .collect()
}

/// Index of the first step whose absolute difference is below `tol`;
/// an infinite `tol` accepts the first entry.
pub fn q_rule(path: &[QStep], tol: f64) -> Option<usize> {
    if path.is_empty() {
        return None;
    }
    if tol == f64::INFINITY {
        return Some(0);
    }
    path.iter().position(|s| s.difference.is_some_and(|d| d.abs() < tol))
}

/// Given `corr[j] = rho_{j+1, j+2}`, the first k whose correlation with
/// k - 1 exceeds `threshold`.
pub fn k_rule(corr: &[f64], threshold: f64) -> Option<usize> {
    corr.iter().position(|&r| r > threshold).map(|j| j + 2)
}

#[derive(Debug, Clone)]
pub struct QSelection {
    pub q: usize,
    /// `q_max` was reached without the rule firing.
    pub flagged: bool,
    pub path: Vec<QStep>,
    pub fit: FitResult,
}

fn path_options(opts: &FitOptions) -> FitOptions {
    FitOptions { standard_errors: false, ..opts.clone() }
}

/// Add the observed information and standard errors to a fit made without them.
pub fn with_standard_errors(mut fit: FitResult, data: &Dataset, fd_step: f64) -> Result<FitResult> {
    let j = observed_info(&fit.spec, data, &fit.params, fd_step)?;
    fit.diagnostics.info = Some(info_diagnostics(&j));
    match standard_errors(&fit.spec, &j, &fit.params) {
        Ok(se) => fit.standard_errors = Some(se),
        Err(e) => fit.diagnostics.warnings.push(format!("standard errors unavailable: {e}")),
    }
    fit.info = Some((0..j.nrows()).map(|r| j.row(r).iter().copied().collect()).collect());
    Ok(fit)
}

/// Run the q path for `spec.k`. The returned fit has no standard errors.
pub fn select_q(spec: &ModelSpec, data: &Dataset, ctl: &QControls, opts: &FitOptions) -> Result<QSelection> {
    let path_opts = path_options(opts);
    let mut points = Vec::new();
    let mut fits: Vec<FitResult> = Vec::new();
    let mut q = ctl.q0;
    loop {
        let s = spec.with_q(q);
        let mut o = path_opts.clone();
        if let Some(prev) = fits.last() {
            o.start = StartStrategy::Given { params: prev.params.clone() };
        }
        let fit = fit_model(&s, data, &o)?;
        points.push((q, fit.loglik));
        fits.push(fit);
        let path = q_path(&points);
        if let Some(j) = q_rule(&path, ctl.tol) {
            return Ok(QSelection { q: path[j].q, flagged: false, path, fit: fits.swap_remove(j) });
        }
        if q + ctl.step > ctl.q_max {
            let last = fits.len() - 1;
            return Ok(QSelection { q, flagged: true, path, fit: fits.swap_remove(last) });
        }
        q += ctl.step;
    }
}

/// Extend a finished q path by `extra` further increments, warm-started from
/// the selected fit, to confirm that the log-likelihood has settled.
pub fn extend_q_path(sel: &QSelection, data: &Dataset, ctl: &QControls, opts: &FitOptions, extra: usize) -> Result<Vec<QStep>> {
    let mut o = path_options(opts);
    let mut points = vec![(sel.q, sel.fit.loglik)];
    let mut params = sel.fit.params.clone();
    for j in 1..=extra {
        let q = sel.q + j * ctl.step;
        o.start = StartStrategy::Given { params: params.clone() };
        let fit = fit_model(&sel.fit.spec.with_q(q), data, &o)?;
        points.push((q, fit.loglik));
        params = fit.params;
    }
    Ok(q_path(&points).into_iter().skip(1).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KStep {
    pub k: usize,
    pub q: usize,
    pub q_flagged: bool,
    pub q_path: Vec<QStep>,
    pub loglik: f64,
    pub n_params: usize,
    pub bic: f64,
    pub aic: f64,
    /// Correlation of the predicted latent surfaces of k - 1 and k.
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub q_controls: QControls,
    pub k_controls: KControls,
    pub knot_bound: f64,
    pub k_path: Vec<KStep>,
    pub chosen_k: usize,
    pub chosen_q: usize,
    /// `k_max` was reached without the rule firing.
    pub k_flagged: bool,
}

#[derive(Debug, Clone)]
pub struct KSelection {
    pub report: SelectionReport,
    /// Fit of the chosen model, with standard errors.
    pub fit: FitResult,
    pub prediction: PredictionSurface,
}

/// Fit k = 1, 2, ..., each at its own selected q. `spec.k` and `spec.q` are
/// ignored.
pub fn select_k(
    spec: &ModelSpec,
    data: &Dataset,
    kctl: &KControls,
    qctl: &QControls,
    opts: &FitOptions,
) -> Result<KSelection> {
    let mut steps: Vec<KStep> = Vec::new();
    let mut chosen: Option<(FitResult, PredictionSurface)> = None;
    let mut prev: Option<(FitResult, PredictionSurface)> = None;
    let mut k_flagged = false;
    for k in 1..=kctl.k_max.max(1) {
        let sel = select_q(&spec.with_k(k), data, qctl, opts)?;
        let pred = predict_alpha(&sel.fit.spec, data, &sel.fit.params)?;
        let correlation = prev.as_ref().map(|(_, p)| {
            pearson(
                p.alpha_hat.as_slice().expect("standard layout"),
                pred.alpha_hat.as_slice().expect("standard layout"),
            )
        });
        steps.push(KStep {
            k,
            q: sel.q,
            q_flagged: sel.flagged,
            q_path: sel.path.clone(),
            loglik: sel.fit.loglik,
            n_params: sel.fit.n_params,
            bic: sel.fit.bic,
            aic: sel.fit.aic,
            correlation,
        });
        let corr: Vec<f64> = steps.iter().filter_map(|s| s.correlation).collect();
        if k_rule(&corr, kctl.threshold) == Some(k) {
            chosen = Some((sel.fit, pred));
            break;
        }
        prev = Some((sel.fit, pred));
    }
    let (fit, prediction) = match chosen {
        Some(c) => c,
        None => {
            k_flagged = true;
            prev.expect("at least one k fitted")
        }
    };
    let fit = with_standard_errors(fit, data, opts.nr.fd_step)?;
    let report = SelectionReport {
        q_controls: *qctl,
        k_controls: *kctl,
        knot_bound: spec.knot_bound,
        chosen_k: fit.spec.k,
        chosen_q: fit.spec.q,
        k_path: steps,
        k_flagged,
    };
    Ok(KSelection { report, fit, prediction })
}
