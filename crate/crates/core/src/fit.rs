//! Starting values and the full estimation pipeline (EM, then Newton-Raphson,
//! then standard errors).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::{ensure_valid, Dataset};
use crate::em::{em_fit, EmControls};
use crate::error::{MlarError, Result};
use crate::model::{Link, ModelSpec, ResponseFamily};
use crate::newton::{
    info_diagnostics, nr_fit, observed_info, standard_errors, InfoDiagnostics, NrControls, StandardErrors,
    TrajectoryPoint, StepKind,
};
use crate::objective::{RespLayout, ResponseObjective, Weights};
use crate::optim::{newton_maximize, max_abs, NewtonControls};
use crate::params::{ParamLayout, Parameters};

/// Offset multiplier for the support points of extra components.
const XI_OFFSET: f64 = 1.0;
const RHO_OFFSET: f64 = 0.2;
const RHO_START: f64 = 0.5;

/// Variance of the standardized link error.
fn link_variance(family: ResponseFamily) -> f64 {
    match family.link() {
        Some(Link::Logit) => std::f64::consts::PI * std::f64::consts::PI / 3.0,
        Some(Link::Probit) => 1.0,
        None => 0.0,
    }
}

/// Fit of the response model with no latent effect.
///
/// Returns the intercepts, slopes and, for the continuous family, the
/// residual variance.
pub fn pooled_fit(spec: &ModelSpec, data: &Dataset) -> Result<(Vec<f64>, Vec<f64>, Option<f64>)> {
    let layout = RespLayout::pooled(spec);
    let knots = [0.0];
    let obj = ResponseObjective { family: spec.family, data, knots: &knots, weights: Weights::Unit, layout };
    let lay = ParamLayout::new(spec);
    let mut x0 = vec![0.0; layout.len()];
    if spec.family.is_continuous() {
        let (mean, var) = mean_var(data.y.iter().copied());
        x0[0] = mean;
        x0[layout.len() - 1] = var.max(1e-8).ln();
    } else {
        let mut neutral = Parameters::neutral(spec).pack(spec)?;
        neutral.truncate(lay.n_cut);
        x0[..lay.n_cut].copy_from_slice(&neutral);
    }
    let out = newton_maximize(|th, need| obj.eval(th, need), &x0, &NewtonControls { max_iter: 100, ..Default::default() })?;
    let mut full = Parameters::neutral(spec).pack(spec)?;
    full[..lay.n_cut + lay.p].copy_from_slice(&out.x[..lay.n_cut + lay.p]);
    if let Some(i) = lay.log_eps() {
        full[i] = out.x[layout.len() - 1];
    }
    let p = Parameters::unpack(&full, spec)?;
    Ok((p.cut, p.beta, p.sigma_eps2))
}

fn mean_var(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Single-component start: pooled estimates rescaled for a latent scale
/// equal to the link's error scale, `rho = 0.5`.
pub fn single_component_start(spec: &ModelSpec, data: &Dataset) -> Result<Parameters> {
    let one = spec.with_k(1);
    let (cut, beta, eps) = pooled_fit(&one, data)?;
    let mut p = Parameters::neutral(&one);
    if let Some(v) = eps {
        // split the residual variance between latent effect and error
        p.cut = cut;
        p.beta = beta;
        p.sigma = (0.5 * v).sqrt();
        p.sigma_eps2 = Some(0.5 * v);
    } else {
        let v_link = link_variance(spec.family);
        let sigma0 = v_link.sqrt();
        let s = (1.0 + sigma0 * sigma0 / v_link).sqrt();
        p.cut = cut.iter().map(|c| c * s).collect();
        p.beta = beta.iter().map(|b| b * s).collect();
        p.sigma = sigma0;
    }
    p.rho = vec![RHO_START];
    p.validate(&one)?;
    Ok(p)
}

/// Spread a single-component solution over `k` components: support points at
/// `+c, -c, +2c, -2c, ...` times sigma, correlations alternating `+-0.2`
/// around the fitted one, equal masses. The overall location and variance of
/// the latent effect are kept.
pub fn spread_components(base: &Parameters, k: usize) -> Parameters {
    let mut p = base.clone();
    let sigma = base.sigma;
    let xi: Vec<f64> = (0..k)
        .map(|h| {
            if h == 0 {
                0.0
            } else {
                let mag = XI_OFFSET * sigma * h.div_ceil(2) as f64;
                if h % 2 == 1 { mag } else { -mag }
            }
        })
        .collect();
    let rho: Vec<f64> = (0..k)
        .map(|h| {
            let step = RHO_OFFSET * h.div_ceil(2) as f64;
            let r = if h % 2 == 1 { base.rho[0] + step } else { base.rho[0] - step };
            r.clamp(-0.95, 0.95)
        })
        .collect();
    let pi = vec![1.0 / k as f64; k];
    let mean: f64 = xi.iter().zip(&pi).map(|(x, w)| x * w).sum();
    let var: f64 = xi.iter().zip(&pi).map(|(x, w)| w * (x - mean).powi(2)).sum();
    p.sigma = (sigma * sigma - var).max(0.25 * sigma * sigma).sqrt();
    p.cut = base.cut.iter().map(|c| c - mean).collect();
    p.xi = xi;
    p.rho = rho;
    p.pi = pi;
    p
}

/// Random perturbation of a start for multi-start searches.
pub fn random_start(base: &Parameters, k: usize, rng: &mut impl Rng) -> Parameters {
    let mut p = spread_components(base, k);
    let sigma = base.sigma;
    for h in 1..k {
        p.xi[h] = rng.random_range(-2.0 * sigma..2.0 * sigma);
    }
    for r in p.rho.iter_mut() {
        *r = rng.random_range(-0.5..0.95);
    }
    let gamma = Gamma::new(2.0, 1.0).expect("valid shape");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng) + 0.05).collect();
    let total: f64 = draws.iter().sum();
    p.pi = draws.iter().map(|d| d / total).collect();
    p.sigma = sigma * rng.random_range(0.6..1.4);
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StartStrategy {
    Default,
    /// The default start plus `n` seeded random starts; the best EM result wins.
    Random { n: usize, seed: u64 },
    Given { params: Parameters },
}

impl StartStrategy {
    /// Parse `default` or `random:N`.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        if s == "default" {
            return Ok(StartStrategy::Default);
        }
        if let Some(n) = s.strip_prefix("random:") {
            let n = n
                .parse()
                .map_err(|_| MlarError::InvalidSpec(format!("bad start strategy '{s}'")))?;
            return Ok(StartStrategy::Random { n, seed });
        }
        Err(MlarError::InvalidSpec(format!("unknown start strategy '{s}' (use default or random:N)")))
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub start: StartStrategy,
    pub em: EmControls,
    pub nr: NrControls,
    pub standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            start: StartStrategy::Default,
            em: EmControls::with_nr_switch(),
            nr: NrControls::default(),
            standard_errors: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub score_norm: f64,
    pub em_iterations: usize,
    pub nr_steps: usize,
    pub em_fallbacks: usize,
    pub starts_tried: usize,
    pub ridge_used: bool,
    pub rho_updates_without_information: usize,
    pub max_em_decrease: f64,
    pub info: Option<InfoDiagnostics>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub params: Parameters,
    pub loglik: f64,
    pub n_subjects: usize,
    pub n_occasions: usize,
    pub n_params: usize,
    pub bic: f64,
    pub aic: f64,
    pub standard_errors: Option<StandardErrors>,
    /// Observed information in the packed coordinates.
    pub info: Option<Vec<Vec<f64>>>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub diagnostics: FitDiagnostics,
}

pub fn bic(loglik: f64, n_params: usize, n_subjects: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n_subjects as f64).ln()
}

pub fn aic(loglik: f64, n_params: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_params as f64
}

/// Default start for `spec`: the single-component start for k = 1; for
/// k > 1 a single-component EM fit spread over k components.
pub fn default_start(spec: &ModelSpec, data: &Dataset) -> Result<Parameters> {
    let base = single_component_start(spec, data)?;
    if spec.k == 1 {
        return Ok(base);
    }
    let one = spec.with_k(1);
    let fitted = em_fit(&one, data, &base, &EmControls::with_nr_switch())?;
    Ok(spread_components(&fitted.params, spec.k))
}

fn candidate_starts(spec: &ModelSpec, data: &Dataset, strategy: &StartStrategy) -> Result<Vec<Parameters>> {
    match strategy {
        StartStrategy::Given { params } => {
            params.validate(spec)?;
            Ok(vec![params.clone()])
        }
        StartStrategy::Default => Ok(vec![default_start(spec, data)?]),
        StartStrategy::Random { n, seed } => {
            let first = default_start(spec, data)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let base = if spec.k == 1 { first.clone() } else { single_component_start(spec, data)? };
            let mut out = vec![first];
            for _ in 0..*n {
                out.push(random_start(&base, spec.k, &mut rng));
            }
            Ok(out)
        }
    }
}

/// EM from every candidate start, Newton-Raphson from the best, then the
/// observed information and standard errors at the estimate.
pub fn fit_model(spec: &ModelSpec, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    spec.validate()?;
    if data.p() != spec.p {
        return Err(MlarError::Dimension { expected: spec.p, got: data.p() });
    }
    ensure_valid(data, spec)?;
    let starts = candidate_starts(spec, data, &opts.start)?;
    let n_starts = starts.len();
    let mut best = None;
    let mut last_err = None;
    for s in starts {
        match em_fit(spec, data, &s, &opts.em) {
            Ok(f) => {
                if best.as_ref().is_none_or(|b: &crate::em::EmFit| f.loglik > b.loglik) {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let em = match (best, last_err) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => return Err(MlarError::Numerical("no start produced a fit".into())),
    };
    let mut warnings = Vec::new();
    if em.rho_flags > 0 {
        warnings.push(format!("{} correlation updates had no transition information", em.rho_flags));
    }

    let mut trajectory: Vec<TrajectoryPoint> =
        em.trajectory[1..].iter().map(|&loglik| TrajectoryPoint { step: StepKind::Em, loglik }).collect();
    let nr = nr_fit(spec, data, &em.params, &opts.nr)?;
    trajectory.extend(nr.trajectory.iter().copied());
    if !nr.converged {
        warnings.push(format!("score max-norm {:.3e} above tolerance", max_abs(&nr.score)));
    }

    let params = nr.params;
    let loglik = nr.loglik;
    let (info, se, info_diag) = if opts.standard_errors {
        let j = observed_info(spec, data, &params, opts.nr.fd_step)?;
        let diag = info_diagnostics(&j);
        let se = match standard_errors(spec, &j, &params) {
            Ok(se) => Some(se),
            Err(e) => {
                warnings.push(format!("standard errors unavailable: {e}"));
                None
            }
        };
        let rows = (0..j.nrows()).map(|r| j.row(r).iter().copied().collect()).collect();
        (Some(rows), se, Some(diag))
    } else {
        (None, None, None)
    };

    let d = spec.n_params();
    Ok(FitResult {
        spec: *spec,
        params,
        loglik,
        n_subjects: data.n(),
        n_occasions: data.t(),
        n_params: d,
        bic: bic(loglik, d, data.n()),
        aic: aic(loglik, d),
        standard_errors: se,
        info,
        trajectory,
        diagnostics: FitDiagnostics {
            converged: nr.converged,
            score_norm: max_abs(&nr.score),
            em_iterations: em.iterations,
            nr_steps: nr.nr_steps,
            em_fallbacks: nr.em_fallbacks,
            starts_tried: n_starts,
            ridge_used: em.ridge_steps > 0 || nr.ridged,
            rho_updates_without_information: em.rho_flags,
            max_em_decrease: em.max_decrease,
            info: info_diag,
            warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_keeps_location_and_alternates() {
        let spec = ModelSpec::new(ResponseFamily::OrdinalLogit { categories: 4 }, 0, 1, 5).unwrap();
        let mut base = Parameters::neutral(&spec);
        base.sigma = 2.0;
        base.rho = vec![0.5];
        let p = spread_components(&base, 4);
        assert_eq!(p.xi, vec![0.0, 2.0, -2.0, 4.0]);
        assert_eq!(p.rho, vec![0.5, 0.7, 0.3, 0.9]);
        let mean: f64 = p.xi.iter().sum::<f64>() / 4.0;
        assert!((p.cut[0] - (base.cut[0] - mean)).abs() < 1e-15);
        let spec4 = spec.with_k(4);
        p.validate(&spec4).unwrap();
    }

    #[test]
    fn start_strategy_parsing() {
        assert_eq!(StartStrategy::parse("default", 1).unwrap(), StartStrategy::Default);
        assert_eq!(StartStrategy::parse("random:5", 9).unwrap(), StartStrategy::Random { n: 5, seed: 9 });
        assert!(StartStrategy::parse("random:x", 0).is_err());
        assert!(StartStrategy::parse("best", 0).is_err());
    }

    #[test]
    fn information_criteria() {
        assert!((bic(-100.0, 3, 100) - (200.0 + 3.0 * 100f64.ln())).abs() < 1e-12);
        assert_eq!(aic(-100.0, 3), 206.0);
    }
}
