//! EM estimation: forward-backward E-step and the three M-step updates.
//!
//! The component posterior is `w_ih = pi_h p^(h)(y_i) / p(y_i)` (Bayes' rule
//! with the prior mass included, so that the weights sum to one).

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MlarError, Result};
use crate::likelihood::{covariate_effects, forward_pass, mix_components};
use crate::model::ModelSpec;
use crate::objective::{clamp_atanh, RespLayout, ResponseObjective, Weights};
use crate::optim::{bisect_max, newton_maximize, NewtonControls, NewtonOutcome};
use crate::par;
use crate::params::{ParamLayout, Parameters};
use crate::quadrature::{transition_objective, QuadratureGrid};

/// Largest |atanh rho| the rho update will move to.
pub const RHO_UPDATE_BOUND: f64 = 5.0;
/// Tolerance of the rho update on the atanh scale.
pub const RHO_TOL: f64 = 1e-9;

/// Cells cached by [`PosteriorStorage::Auto`] unless changed with
/// [`set_cell_budget`]: 2^25 cells, 256 MiB of `f64`.
pub const DEFAULT_CELL_BUDGET: usize = 1 << 25;

static CELL_BUDGET: AtomicUsize = AtomicUsize::new(DEFAULT_CELL_BUDGET);

/// Largest `n T k q` for which the per-cell posterior weights are held in
/// memory under [`PosteriorStorage::Auto`]. Process-wide.
pub fn set_cell_budget(cells: usize) {
    CELL_BUDGET.store(cells, Ordering::Relaxed);
}

pub fn cell_budget() -> usize {
    CELL_BUDGET.load(Ordering::Relaxed)
}

/// How the response update and the score get the per-cell weights
/// `E(w_ih z_imt | data)`. The results are identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorStorage {
    /// Cache within [`cell_budget`], recompute beyond it.
    #[default]
    Auto,
    /// Hold the full `n x T x k x q` array.
    Cached,
    /// Keep per-subject summaries only and rerun a subject's
    /// forward-backward pass whenever its weights are needed.
    Recompute,
}

impl PosteriorStorage {
    pub fn caches(self, cells: usize) -> bool {
        match self {
            PosteriorStorage::Auto => cells <= cell_budget(),
            PosteriorStorage::Cached => true,
            PosteriorStorage::Recompute => false,
        }
    }
}

/// E-step expectations at a fixed parameter value.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// `P(u_i = h | data)`, `n x k`.
    pub w_hat: Array2<f64>,
    /// `E(z_imt | u_i = h, data)`, `n x k x T x q`.
    pub occ: Array4<f64>,
    /// Expected knot-transition counts per component, summed over subjects
    /// (weighted by `w_hat`) and occasions `t > 1`; `k` matrices `q x q`.
    pub trans_suff: Vec<Array2<f64>>,
    /// `E(w_ih z_imt | data)`, `n x T x k x q`.
    pub resp: Array4<f64>,
    /// `log p^(h)(y_i | X_i)`, `n x k`.
    pub log_p_component: Array2<f64>,
    /// Log-likelihood at the parameters the E-step was run at.
    pub loglik: f64,
}

pub(crate) struct SubjectPost {
    i: usize,
    pub w: Vec<f64>,
    /// k x T x q
    pub occ: Vec<f64>,
    log_comp: Vec<f64>,
    pub loglik: f64,
}

struct EAcc {
    f: Vec<f64>,
    rows: Vec<SubjectPost>,
    err: Option<MlarError>,
}

/// Forward-backward pass of subject `i`. Transition counts are added into
/// `f_acc` when given.
pub(crate) fn subject_estep(
    spec: &ModelSpec,
    data: &Dataset,
    params: &Parameters,
    grid: &QuadratureGrid,
    i: usize,
    f_acc: Option<&mut [f64]>,
) -> Result<SubjectPost> {
    let k = params.k();
    let q = grid.q();
    let n_t = data.t();
    let xb = covariate_effects(data, params, i);
    let mut occ = vec![0.0; k * n_t * q];
    let want_trans = f_acc.is_some();
    let mut trans = vec![0.0; if want_trans { k * q * q } else { 0 }];
    let mut log_comp = vec![0.0; k];
    let mut beta = vec![0.0; n_t * q];
    let mut tmp = vec![0.0; q];

    for h in 0..k {
        let fp = forward_pass(spec, data, params, grid, i, h, &xb)?;
        log_comp[h] = fp.loglik;
        let w = grid.w_trans[h].as_slice().expect("standard layout");

        beta[(n_t - 1) * q..].fill(1.0);
        for t in (0..n_t.saturating_sub(1)).rev() {
            let inv_c = 1.0 / fp.scale[t + 1];
            for m2 in 0..q {
                tmp[m2] = fp.emis[(t + 1) * q + m2] * beta[(t + 1) * q + m2] * inv_c;
            }
            for m1 in 0..q {
                let row = &w[m1 * q..(m1 + 1) * q];
                beta[t * q + m1] = row.iter().zip(&tmp).map(|(a, b)| a * b).sum();
            }
        }

        let occ_h = &mut occ[h * n_t * q..(h + 1) * n_t * q];
        for (o, (a, b)) in occ_h.iter_mut().zip(fp.alpha.iter().zip(&beta)) {
            *o = a * b;
        }
        if !want_trans {
            continue;
        }

        let tr = &mut trans[h * q * q..(h + 1) * q * q];
        for t in 1..n_t {
            let inv_c = 1.0 / fp.scale[t];
            for m2 in 0..q {
                tmp[m2] = fp.emis[t * q + m2] * beta[t * q + m2] * inv_c;
            }
            for m1 in 0..q {
                let a = fp.alpha[(t - 1) * q + m1];
                if a == 0.0 {
                    continue;
                }
                let row = &w[m1 * q..(m1 + 1) * q];
                let out = &mut tr[m1 * q..(m1 + 1) * q];
                for ((o, wv), tv) in out.iter_mut().zip(row).zip(&tmp) {
                    *o += a * wv * tv;
                }
            }
        }
    }

    let loglik = mix_components(params, &log_comp);
    let wts: Vec<f64> = params
        .pi
        .iter()
        .zip(&log_comp)
        .map(|(p, l)| (p.ln() + l - loglik).exp())
        .collect();
    if let Some(f_acc) = f_acc {
        for h in 0..k {
            let wh = wts[h];
            let src = &trans[h * q * q..(h + 1) * q * q];
            let dst = &mut f_acc[h * q * q..(h + 1) * q * q];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wh * s;
            }
        }
    }
    Ok(SubjectPost { i, w: wts, occ, log_comp, loglik })
}

/// Posterior expectations of the component and knot indicators.
pub fn e_step(spec: &ModelSpec, data: &Dataset, params: &Parameters, grid: &QuadratureGrid) -> Result<Posteriors> {
    let st = e_pass(spec, data, params, grid, Keep::All)?;
    let (occ, resp) = (st.occ.expect("kept"), st.resp.expect("kept"));
    Ok(Posteriors {
        w_hat: st.w_hat,
        occ,
        trans_suff: st.trans_suff,
        resp,
        log_p_component: st.log_p_component,
        loglik: st.loglik,
    })
}

#[derive(Clone, Copy, PartialEq)]
pub(crate) enum Keep {
    Summaries,
    Resp,
    All,
}

/// E-step sums; the per-cell arrays only as far as `keep` asks.
pub(crate) struct EStats {
    pub w_hat: Array2<f64>,
    pub trans_suff: Vec<Array2<f64>>,
    pub log_p_component: Array2<f64>,
    pub loglik: f64,
    pub occ: Option<Array4<f64>>,
    /// `n x T x k x q`
    pub resp: Option<Array4<f64>>,
}

impl EStats {
    /// Cell weights of the response objective: the cached array, or
    /// `source` rerunning the pass at the parameters of this E-step.
    pub fn weights<'a>(&'a self, source: &'a CellSource<'a>) -> Weights<'a> {
        match &self.resp {
            Some(r) => Weights::Posterior(r),
            None => Weights::Recompute(source),
        }
    }
}

pub(crate) fn keep_for(storage: PosteriorStorage, spec: &ModelSpec, data: &Dataset) -> Keep {
    if storage.caches(data.n() * data.t() * spec.k * spec.q) {
        Keep::Resp
    } else {
        Keep::Summaries
    }
}

pub(crate) fn e_pass(
    spec: &ModelSpec,
    data: &Dataset,
    params: &Parameters,
    grid: &QuadratureGrid,
    keep: Keep,
) -> Result<EStats> {
    let k = params.k();
    let q = grid.q();
    let (n, n_t) = (data.n(), data.t());
    if grid.k() != k {
        return Err(MlarError::Dimension { expected: k, got: grid.k() });
    }
    let acc = par::fold_reduce(
        n,
        || EAcc { f: vec![0.0; k * q * q], rows: Vec::new(), err: None },
        |acc, i| {
            if acc.err.is_some() {
                return;
            }
            match subject_estep(spec, data, params, grid, i, Some(&mut acc.f)) {
                Ok(mut row) => {
                    if keep == Keep::Summaries {
                        row.occ = Vec::new();
                    }
                    acc.rows.push(row)
                }
                Err(e) => acc.err = Some(e),
            }
        },
        |a, b| {
            if a.err.is_none() {
                a.err = b.err;
            }
            a.f.iter_mut().zip(&b.f).for_each(|(x, y)| *x += y);
            a.rows.extend(b.rows);
        },
    );
    if let Some(e) = acc.err {
        return Err(e);
    }

    let mut w_hat = Array2::zeros((n, k));
    let mut log_p_component = Array2::zeros((n, k));
    let mut occ = (keep == Keep::All).then(|| Array4::zeros((n, k, n_t, q)));
    let mut resp = (keep != Keep::Summaries).then(|| Array4::zeros((n, n_t, k, q)));
    let mut per_subject = vec![0.0; n];
    for row in acc.rows {
        let i = row.i;
        per_subject[i] = row.loglik;
        for h in 0..k {
            w_hat[[i, h]] = row.w[h];
            log_p_component[[i, h]] = row.log_comp[h];
            let Some(resp) = resp.as_mut() else { continue };
            for t in 0..n_t {
                for m in 0..q {
                    let o = row.occ[(h * n_t + t) * q + m];
                    if let Some(occ) = occ.as_mut() {
                        occ[[i, h, t, m]] = o;
                    }
                    resp[[i, t, h, m]] = row.w[h] * o;
                }
            }
        }
    }
    let loglik: f64 = per_subject.iter().sum();
    if !loglik.is_finite() || w_hat.iter().any(|w| !w.is_finite()) {
        return Err(MlarError::Numerical("non-finite posterior quantities".into()));
    }
    let trans_suff = (0..k)
        .map(|h| Array2::from_shape_vec((q, q), acc.f[h * q * q..(h + 1) * q * q].to_vec()).expect("q x q"))
        .collect();
    Ok(EStats { w_hat, trans_suff, log_p_component, loglik, occ, resp })
}

/// Recomputes the cell weights `E(w_ih z_imt | data)` of one subject at
/// fixed parameters.
pub(crate) struct CellSource<'a> {
    pub spec: &'a ModelSpec,
    pub data: &'a Dataset,
    pub params: &'a Parameters,
    pub grid: &'a QuadratureGrid,
}

impl CellSource<'_> {
    /// Weights of subject `i`, laid out `T x k x q`.
    pub fn fill(&self, i: usize, out: &mut [f64]) -> Result<()> {
        let row = subject_estep(self.spec, self.data, self.params, self.grid, i, None)?;
        let (k, n_t, q) = (self.params.k(), self.data.t(), self.grid.q());
        for t in 0..n_t {
            for h in 0..k {
                for m in 0..q {
                    out[(t * k + h) * q + m] = row.w[h] * row.occ[(h * n_t + t) * q + m];
                }
            }
        }
        Ok(())
    }
}

/// Closed-form update of the mixture masses.
pub fn m_step_pi(post: &Posteriors) -> Vec<f64> {
    pi_update(&post.w_hat)
}

fn pi_update(w_hat: &Array2<f64>) -> Vec<f64> {
    let sums: Vec<f64> = w_hat.columns().into_iter().map(|c| c.sum()).collect();
    let total: f64 = sums.iter().sum();
    sums.iter().map(|s| (s / total).max(1e-300)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoStep {
    pub rho: f64,
    /// No transition information was available; the previous value was kept.
    pub flagged: bool,
}

/// Maximize `sum F[m1,m2] ln w[m1,m2](rho)` over `rho = tanh(u)`,
/// `|u| <= RHO_UPDATE_BOUND`. Never returns a value with a lower objective
/// than `rho_prev`.
pub fn m_step_rho(f: &Array2<f64>, knots: &[f64], rho_prev: f64) -> Result<RhoStep> {
    if f.iter().all(|&v| v == 0.0) {
        return Ok(RhoStep { rho: rho_prev, flagged: true });
    }
    if f.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(MlarError::InvalidParameters("transition counts must be finite and non-negative".into()));
    }
    let u = bisect_max(
        |u| transition_objective(f, knots, u.tanh()).map(|(_, d)| d),
        -RHO_UPDATE_BOUND,
        RHO_UPDATE_BOUND,
        RHO_TOL,
    )?;
    let candidate = u.tanh();
    let (new_val, _) = transition_objective(f, knots, candidate)?;
    let (old_val, _) = transition_objective(f, knots, rho_prev)?;
    let rho = if new_val >= old_val { candidate } else { rho_prev };
    Ok(RhoStep { rho, flagged: false })
}

#[derive(Debug, Clone)]
pub struct ResponseStep {
    pub params: Parameters,
    pub newton: NewtonOutcome,
}

/// Newton-Raphson on the posterior-weighted response log-likelihood, over
/// the intercepts, slopes, free support points, ln sigma (and the log error
/// variance). `xi_1` stays at zero.
pub fn m_step_response(
    spec: &ModelSpec,
    data: &Dataset,
    post: &Posteriors,
    params: &Parameters,
    knots: &[f64],
    ctl: &NewtonControls,
) -> Result<ResponseStep> {
    response_update(spec, data, Weights::Posterior(&post.resp), params, knots, ctl)
}

fn response_update(
    spec: &ModelSpec,
    data: &Dataset,
    weights: Weights,
    params: &Parameters,
    knots: &[f64],
    ctl: &NewtonControls,
) -> Result<ResponseStep> {
    let layout = RespLayout::for_spec(spec);
    let packed = params.pack(spec)?;
    let n_resp = ParamLayout::new(spec).n_response();
    let obj = ResponseObjective { family: spec.family, data, knots, weights, layout };
    let newton = newton_maximize(|th, need| obj.eval(th, need), &packed[..n_resp], ctl)?;
    let mut full = packed;
    full[..n_resp].copy_from_slice(&newton.x);
    let updated = Parameters::unpack(&full, spec)?;
    Ok(ResponseStep { params: updated, newton })
}

#[derive(Debug, Clone, Copy)]
pub struct EmControls {
    pub max_iter: usize,
    /// Stop once the log-likelihood increase falls below this.
    pub tol: f64,
    /// Hand over to Newton-Raphson after this many iterations...
    pub switch_after: Option<usize>,
    /// ...or once the increase falls below this, whichever comes first.
    pub switch_delta: Option<f64>,
    pub newton: NewtonControls,
    pub storage: PosteriorStorage,
}

impl Default for EmControls {
    fn default() -> Self {
        EmControls {
            max_iter: 500,
            tol: 1e-6,
            switch_after: None,
            switch_delta: None,
            newton: NewtonControls::default(),
            storage: PosteriorStorage::Auto,
        }
    }
}

impl EmControls {
    /// EM as the first stage of a fit: stop after 100 iterations or when the
    /// increase drops below 1e-4.
    pub fn with_nr_switch() -> Self {
        EmControls { switch_after: Some(100), switch_delta: Some(1e-4), ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: Parameters,
    pub loglik: f64,
    /// Log-likelihood at the start and after every iteration.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub switched: bool,
    /// Largest decrease seen between consecutive iterations (0 if none).
    pub max_decrease: f64,
    pub ridge_steps: usize,
    pub rho_flags: usize,
}

/// One M-step from an E-step already run at `params`.
pub(crate) fn m_step(
    spec: &ModelSpec,
    data: &Dataset,
    params: &Parameters,
    grid: &QuadratureGrid,
    post: &EStats,
    ctl: &NewtonControls,
) -> Result<(Parameters, bool, usize)> {
    let pi = pi_update(&post.w_hat);
    let mut rho = Vec::with_capacity(params.k());
    let mut flags = 0;
    for (h, f) in post.trans_suff.iter().enumerate() {
        let step = m_step_rho(f, &grid.knots, params.rho[h])?;
        flags += usize::from(step.flagged);
        rho.push(clamp_atanh(step.rho.atanh()).tanh());
    }
    let source = CellSource { spec, data, params, grid };
    let resp = response_update(spec, data, post.weights(&source), params, &grid.knots, ctl)?;
    let mut next = resp.params;
    next.pi = pi;
    next.rho = rho;
    Ok((next, resp.newton.ridged, flags))
}

/// A single EM iteration from `params`.
pub fn em_step(spec: &ModelSpec, data: &Dataset, params: &Parameters) -> Result<Parameters> {
    let grid = QuadratureGrid::new(spec.q, spec.knot_bound, &params.rho)?;
    let post = e_pass(spec, data, params, &grid, keep_for(PosteriorStorage::Auto, spec, data))?;
    Ok(m_step(spec, data, params, &grid, &post, &NewtonControls::default())?.0)
}

pub fn em_fit(spec: &ModelSpec, data: &Dataset, start: &Parameters, ctl: &EmControls) -> Result<EmFit> {
    spec.validate()?;
    start.validate(spec)?;
    let mut params = start.clone();
    let mut grid = QuadratureGrid::new(spec.q, spec.knot_bound, &params.rho)?;
    let keep = keep_for(ctl.storage, spec, data);
    let mut post = e_pass(spec, data, &params, &grid, keep)?;
    let mut trajectory = vec![post.loglik];
    let mut fit = EmFit {
        params: params.clone(),
        loglik: post.loglik,
        trajectory: Vec::new(),
        iterations: 0,
        converged: false,
        switched: false,
        max_decrease: 0.0,
        ridge_steps: 0,
        rho_flags: 0,
    };

    for iter in 1..=ctl.max_iter {
        let (next, ridged, flags) = m_step(spec, data, &params, &grid, &post, &ctl.newton)?;
        fit.ridge_steps += usize::from(ridged);
        fit.rho_flags += flags;
        grid = grid.with_rho(&next.rho)?;
        let next_post = e_pass(spec, data, &next, &grid, keep).map_err(|e| {
            MlarError::Numerical(format!("EM iteration {iter}: {e}"))
        })?;
        if !next_post.loglik.is_finite() {
            return Err(MlarError::Numerical(format!("non-finite log-likelihood at EM iteration {iter}")));
        }
        let delta = next_post.loglik - post.loglik;
        fit.max_decrease = fit.max_decrease.max(-delta);
        trajectory.push(next_post.loglik);
        params = next;
        post = next_post;
        fit.iterations = iter;
        if delta < ctl.tol {
            fit.converged = true;
            break;
        }
        let by_count = ctl.switch_after.is_some_and(|n| iter >= n);
        let by_delta = ctl.switch_delta.is_some_and(|d| delta < d);
        if by_count || by_delta {
            fit.switched = true;
            break;
        }
    }
    fit.loglik = post.loglik;
    fit.params = params;
    fit.trajectory = trajectory;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ResponseFamily;
    use crate::quadrature::{make_knots, transition_weights};
    use ndarray::{Array2, Array3};

    fn small() -> (ModelSpec, Dataset, Parameters) {
        let spec = ModelSpec::new(ResponseFamily::OrdinalLogit { categories: 3 }, 1, 2, 9).unwrap();
        let y = Array2::from_shape_fn((6, 4), |(i, t)| ((i + t / 2) % 3 + 1) as f64);
        let x = Array3::from_shape_fn((6, 4, 1), |(i, t, _)| ((i * 5 + t) % 4) as f64 * 0.4 - 0.6);
        let params = Parameters {
            cut: vec![0.7, -0.9],
            beta: vec![0.3],
            sigma: 1.1,
            sigma_eps2: None,
            xi: vec![0.0, 0.8],
            rho: vec![0.6, 0.1],
            pi: vec![0.55, 0.45],
        };
        (spec, Dataset::new(y, x).unwrap(), params)
    }

    #[test]
    fn posterior_normalizations() {
        let (spec, data, params) = small();
        let grid = QuadratureGrid::new(spec.q, 5.0, &params.rho).unwrap();
        let post = e_step(&spec, &data, &params, &grid).unwrap();
        for i in 0..data.n() {
            assert!((post.w_hat.row(i).sum() - 1.0).abs() < 1e-10);
            for h in 0..2 {
                for t in 0..data.t() {
                    let s: f64 = (0..spec.q).map(|m| post.occ[[i, h, t, m]]).sum();
                    assert!((s - 1.0).abs() < 1e-10);
                }
            }
        }
        for h in 0..2 {
            let expected = (data.t() - 1) as f64 * post.w_hat.column(h).sum();
            assert!((post.trans_suff[h].sum() - expected).abs() < 1e-8);
        }
        let ll = crate::likelihood::total_loglik(&spec, &data, &params, &grid).unwrap();
        assert!((ll - post.loglik).abs() < 1e-10);
    }

    #[test]
    fn single_component_weights_are_one() {
        let (spec, data, mut params) = small();
        let spec = spec.with_k(1);
        params.xi.truncate(1);
        params.rho.truncate(1);
        params.pi = vec![1.0];
        let grid = QuadratureGrid::new(spec.q, 5.0, &params.rho).unwrap();
        let post = e_step(&spec, &data, &params, &grid).unwrap();
        assert!(post.w_hat.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn pi_update_is_column_mean() {
        let (spec, data, params) = small();
        let grid = QuadratureGrid::new(spec.q, 5.0, &params.rho).unwrap();
        let mut post = e_step(&spec, &data, &params, &grid).unwrap();
        let mut w = Array2::zeros((4, 2));
        for i in 0..3 {
            w[[i, 0]] = 1.0;
        }
        w[[3, 1]] = 1.0;
        post.w_hat = w;
        assert_eq!(m_step_pi(&post), vec![0.75, 0.25]);
        post.w_hat = Array2::from_elem((4, 2), 0.5);
        assert_eq!(m_step_pi(&post), vec![0.5, 0.5]);
    }

    #[test]
    fn rho_update_recovers_generating_value() {
        let knots = make_knots(21, 5.0).unwrap();
        let w = transition_weights(&knots, 0.5).unwrap();
        let mass: Vec<f64> = knots.iter().map(|nu| (-0.5 * nu * nu).exp() * 3.0 + 0.01).collect();
        let f = Array2::from_shape_fn((21, 21), |(a, b)| mass[a] * w[[a, b]]);
        let step = m_step_rho(&f, &knots, 0.0).unwrap();
        assert!(!step.flagged);
        assert!((step.rho - 0.5).abs() < 1e-4, "{}", step.rho);
        // a fine grid scan of the objective agrees
        let best = (-999..=999)
            .map(|j| j as f64 / 1000.0)
            .max_by(|a, b| {
                let fa = transition_objective(&f, &knots, *a).unwrap().0;
                let fb = transition_objective(&f, &knots, *b).unwrap().0;
                fa.total_cmp(&fb)
            })
            .unwrap();
        assert!((best - step.rho).abs() <= 1e-3);
    }

    #[test]
    fn rho_update_diagonal_mass_hits_bound() {
        let knots = make_knots(11, 5.0).unwrap();
        let f = Array2::from_shape_fn((11, 11), |(a, b)| if a == b { 1.0 } else { 0.0 });
        let step = m_step_rho(&f, &knots, 0.2).unwrap();
        assert!((step.rho - RHO_UPDATE_BOUND.tanh()).abs() < 1e-12);
    }

    #[test]
    fn rho_update_without_information_keeps_previous() {
        let knots = make_knots(5, 5.0).unwrap();
        let step = m_step_rho(&Array2::zeros((5, 5)), &knots, 0.3).unwrap();
        assert_eq!(step, RhoStep { rho: 0.3, flagged: true });
    }

    #[test]
    fn rho_objective_symmetric_under_reversal() {
        let knots = make_knots(9, 5.0).unwrap();
        let f = Array2::from_shape_fn((9, 9), |(a, b)| 1.0 + ((a * 3 + b) % 4) as f64);
        let rev = Array2::from_shape_fn((9, 9), |(a, b)| f[[8 - a, 8 - b]]);
        let sym = &f + &rev;
        for r in [-0.8, -0.3, 0.0, 0.4, 0.9] {
            let (a, _) = transition_objective(&sym, &knots, r).unwrap();
            let (b, _) = transition_objective(&rev, &knots, r).unwrap();
            let (c, _) = transition_objective(&f, &knots, r).unwrap();
            assert!((a - (b + c)).abs() < 1e-9 * a.abs());
            assert!((b - c).abs() < 1e-9 * b.abs());
        }
    }

    #[test]
    fn em_is_monotone_and_stops_on_infinite_tol() {
        let (spec, data, params) = small();
        let ctl = EmControls { max_iter: 15, tol: f64::NEG_INFINITY, ..EmControls::default() };
        let fit = em_fit(&spec, &data, &params, &ctl).unwrap();
        assert_eq!(fit.iterations, 15);
        for w in fit.trajectory.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{:?}", fit.trajectory);
        }
        let once = em_fit(&spec, &data, &params, &EmControls { tol: f64::INFINITY, ..EmControls::default() }).unwrap();
        assert_eq!(once.iterations, 1);
        assert_eq!(once.trajectory.len(), 2);
    }
}
