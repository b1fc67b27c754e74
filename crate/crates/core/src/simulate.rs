//! Synthetic panels from a fully specified model, and replicate studies.
//!
//! Every subject draws from its own ChaCha stream (`seed`, stream = subject
//! index), so output does not depend on the number of worker threads.

use ndarray::{Array2, Array3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Open01;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MlarError, Result};
use crate::fit::{fit_model, FitOptions, FitResult};
use crate::model::{Link, ModelSpec};
use crate::par;
use crate::params::Parameters;

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateGen {
    None,
    /// Independent standard normals; the first `p / 2` covariates are
    /// constant over time, the rest vary.
    StandardNormal,
    /// Fixed `n x T x p` table.
    Table(Array3<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimControl {
    pub n: usize,
    pub t: usize,
    pub seed: u64,
    pub covariates: CovariateGen,
}

impl SimControl {
    pub fn new(n: usize, t: usize, seed: u64) -> Self {
        SimControl { n, t, seed, covariates: CovariateGen::StandardNormal }
    }
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    /// Component of each subject (zero-based).
    pub component: Vec<usize>,
    /// Latent effects, `n x T`.
    pub alpha: Array2<f64>,
}

struct SubjectDraw {
    y: Vec<f64>,
    x: Vec<f64>,
    u: usize,
    alpha: Vec<f64>,
}

fn check_sim_params(spec: &ModelSpec, params: &Parameters) -> Result<()> {
    // sigma = 0 is a legitimate degenerate generator
    if params.sigma == 0.0 {
        let mut p = params.clone();
        p.sigma = 1.0;
        p.validate(spec)
    } else {
        params.validate(spec)
    }
}

pub fn simulate_dataset(spec: &ModelSpec, params: &Parameters, ctl: &SimControl) -> Result<Simulated> {
    spec.validate()?;
    check_sim_params(spec, params)?;
    if ctl.n == 0 || ctl.t == 0 {
        return Err(MlarError::InvalidSpec("n and T must both be at least 1".into()));
    }
    let p = spec.p;
    match &ctl.covariates {
        CovariateGen::None if p > 0 => {
            return Err(MlarError::InvalidSpec(format!("model has {p} covariates but none are generated")));
        }
        CovariateGen::Table(x) if x.dim() != (ctl.n, ctl.t, p) => {
            return Err(MlarError::InvalidSpec(format!(
                "covariate table is {:?}, expected ({}, {}, {p})",
                x.dim(),
                ctl.n,
                ctl.t
            )));
        }
        _ => {}
    }
    let comp = WeightedIndex::new(&params.pi).map_err(|e| MlarError::InvalidParameters(e.to_string()))?;
    let draws = par::map_collect(ctl.n, |i| draw_subject(spec, params, ctl, &comp, i));

    let mut y = Array2::zeros((ctl.n, ctl.t));
    let mut x = Array3::zeros((ctl.n, ctl.t, p));
    let mut alpha = Array2::zeros((ctl.n, ctl.t));
    let mut component = Vec::with_capacity(ctl.n);
    for (i, d) in draws.into_iter().enumerate() {
        for t in 0..ctl.t {
            y[[i, t]] = d.y[t];
            alpha[[i, t]] = d.alpha[t];
            for j in 0..p {
                x[[i, t, j]] = d.x[t * p + j];
            }
        }
        component.push(d.u);
    }
    Ok(Simulated { data: Dataset::new(y, x)?, component, alpha })
}

fn draw_subject(
    spec: &ModelSpec,
    params: &Parameters,
    ctl: &SimControl,
    comp: &WeightedIndex<f64>,
    i: usize,
) -> SubjectDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(ctl.seed);
    rng.set_stream(i as u64);
    let (n_t, p) = (ctl.t, spec.p);

    let mut x = vec![0.0; n_t * p];
    match &ctl.covariates {
        CovariateGen::None => {}
        CovariateGen::Table(tab) => {
            for t in 0..n_t {
                for j in 0..p {
                    x[t * p + j] = tab[[i, t, j]];
                }
            }
        }
        CovariateGen::StandardNormal => {
            let fixed = p / 2;
            for j in 0..fixed {
                let v: f64 = StandardNormal.sample(&mut rng);
                for t in 0..n_t {
                    x[t * p + j] = v;
                }
            }
            for t in 0..n_t {
                for j in fixed..p {
                    x[t * p + j] = StandardNormal.sample(&mut rng);
                }
            }
        }
    }

    let u = comp.sample(&mut rng);
    let (xi, rho, sigma) = (params.xi[u], params.rho[u], params.sigma);
    let innov = sigma * (1.0 - rho * rho).sqrt();
    let mut alpha = Vec::with_capacity(n_t);
    for t in 0..n_t {
        let e: f64 = StandardNormal.sample(&mut rng);
        let a = if t == 0 { xi + sigma * e } else { xi + (alpha[t - 1] - xi) * rho + innov * e };
        alpha.push(a);
    }

    let y = (0..n_t)
        .map(|t| {
            let xb: f64 = x[t * p..(t + 1) * p].iter().zip(&params.beta).map(|(a, b)| a * b).sum();
            let eta = alpha[t] + xb;
            match spec.family.link() {
                None => {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    params.cut[0] + eta + params.sigma_eps2.unwrap_or(1.0_f64).sqrt() * e
                }
                Some(link) => {
                    let e: f64 = match link {
                        Link::Logit => {
                            let u: f64 = Open01.sample(&mut rng);
                            (u / (1.0 - u)).ln()
                        }
                        Link::Probit => StandardNormal.sample(&mut rng),
                    };
                    let above = params.cut.iter().filter(|&&mu| mu + eta + e > 0.0).count();
                    if spec.family.is_binary() { above as f64 } else { (1 + above) as f64 }
                }
            }
        })
        .collect();
    SubjectDraw { y, x, u, alpha }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub name: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Standard deviation of the estimates over replicates.
    pub empirical_se: f64,
    /// Mean of the reported standard errors (replicates with SEs only).
    pub mean_reported_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTable {
    pub reps: usize,
    pub successful: usize,
    pub rows: Vec<RecoveryRow>,
    /// `(replicate, error message)` for failed replicates.
    pub failures: Vec<(usize, String)>,
}

/// Permutation of the fitted components that best matches `truth` on
/// `(xi, rho)`, after re-centering both on their first component.
pub fn align_to_truth(fitted: &Parameters, truth: &Parameters) -> Vec<usize> {
    let k = fitted.k();
    let mut best = (f64::INFINITY, (0..k).collect::<Vec<_>>());
    let mut perm: Vec<usize> = (0..k).collect();
    permutations(&mut perm, 0, &mut |p| {
        let Ok(r) = fitted.relabel(p) else { return };
        let cost: f64 = (0..k)
            .map(|h| (r.xi[h] - truth.xi[h]).powi(2) + (r.rho[h] - truth.rho[h]).powi(2))
            .sum();
        if cost < best.0 {
            best = (cost, p.to_vec());
        }
    });
    best.1
}

fn permutations(v: &mut Vec<usize>, start: usize, f: &mut impl FnMut(&[usize])) {
    if start == v.len() {
        f(v);
        return;
    }
    for j in start..v.len() {
        v.swap(start, j);
        permutations(v, start + 1, f);
        v.swap(start, j);
    }
}

/// Refit a relabeled estimate's standard errors at the relabeled point.
fn aligned(fit: FitResult, truth: &Parameters, data: &Dataset, fd_step: f64) -> Result<FitResult> {
    let perm = align_to_truth(&fit.params, truth);
    if perm.iter().enumerate().all(|(a, &b)| a == b) {
        return Ok(fit);
    }
    let mut fit = fit;
    fit.params = fit.params.relabel(&perm)?;
    fit.standard_errors = None;
    crate::select::with_standard_errors(fit, data, fd_step)
}

/// Simulate `reps` datasets (seeds `seed, seed + 1, ...`), fit the true
/// model to each from the default start, and summarize recovery.
pub fn replicate_study(
    spec: &ModelSpec,
    truth: &Parameters,
    ctl: &SimControl,
    reps: usize,
    opts: &FitOptions,
) -> Result<RecoveryTable> {
    if reps == 0 {
        return Err(MlarError::InvalidSpec("reps must be at least 1".into()));
    }
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for r in 0..reps {
        let c = SimControl { seed: ctl.seed.wrapping_add(r as u64), ..ctl.clone() };
        let outcome = simulate_dataset(spec, truth, &c)
            .and_then(|sim| fit_model(spec, &sim.data, opts).and_then(|f| aligned(f, truth, &sim.data, opts.nr.fd_step)));
        match outcome {
            Ok(f) => fits.push(f),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    let truth_vals = truth.named_values();
    let rows = truth_vals
        .iter()
        .enumerate()
        .map(|(j, (name, tv))| {
            let est: Vec<f64> = fits.iter().map(|f| f.params.named_values()[j].1).collect();
            let m = est.len() as f64;
            let mean = est.iter().sum::<f64>() / m;
            let var = if est.len() > 1 {
                est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            let ses: Vec<f64> = fits
                .iter()
                .filter_map(|f| f.standard_errors.as_ref().map(|s| s.estimates[j].se))
                .collect();
            RecoveryRow {
                name: name.clone(),
                truth: *tv,
                mean_estimate: mean,
                bias: mean - tv,
                empirical_se: var.sqrt(),
                mean_reported_se: (!ses.is_empty()).then(|| ses.iter().sum::<f64>() / ses.len() as f64),
            }
        })
        .collect();
    Ok(RecoveryTable { reps, successful: fits.len(), rows, failures })
}
