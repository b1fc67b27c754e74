//! Constrained parameter container and its unconstrained packing.
//!
//! Packed layout (length [`count_parameters`]):
//!
//! ```text
//! [ cut (J-1 or 1) | beta (p) | ln sigma | ln sigma_eps^2 (continuous only)
//!   | xi_2..xi_k | atanh rho_1..rho_k | ln(pi_h / pi_1), h = 2..k ]
//! ```
//!
//! Threshold cutpoints are packed as `mu_2` followed by the logs of the
//! successive decrements `mu_j - mu_{j+1}`, which keeps them non-increasing.
//! The leading block up to and including the free support points is the
//! "response block": everything the conditional response law depends on.

use serde::{Deserialize, Serialize};

use crate::error::{MlarError, Result};
use crate::model::{count_parameters, ModelSpec};

/// Largest |atanh rho| produced by unpacking; tanh stays strictly below 1.
pub const MAX_ATANH: f64 = 18.0;
const MAX_LOG_SCALE: f64 = 700.0;
const MIN_PI: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// Ordinal/binary: mu_2..mu_J (non-increasing). Continuous: the intercept.
    pub cut: Vec<f64>,
    pub beta: Vec<f64>,
    /// Latent scale, shared by all components.
    pub sigma: f64,
    /// Measurement-error variance; continuous family only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_eps2: Option<f64>,
    /// Support points; `xi[0]` is pinned to zero.
    pub xi: Vec<f64>,
    pub rho: Vec<f64>,
    pub pi: Vec<f64>,
}

/// Offsets of each block inside the packed vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_cut: usize,
    pub p: usize,
    pub k: usize,
    pub continuous: bool,
    /// Monotone (cumulative-exponential) cutpoint transform.
    pub monotone_cut: bool,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec) -> Self {
        ParamLayout {
            n_cut: spec.family.n_cut(),
            p: spec.p,
            k: spec.k,
            continuous: spec.family.is_continuous(),
            monotone_cut: !spec.family.is_continuous(),
        }
    }

    pub fn beta(&self) -> usize {
        self.n_cut
    }
    pub fn log_sigma(&self) -> usize {
        self.n_cut + self.p
    }
    /// Index of ln sigma_eps^2, if present.
    pub fn log_eps(&self) -> Option<usize> {
        self.continuous.then_some(self.log_sigma() + 1)
    }
    /// Index of xi_2 (component index 1, zero-based).
    pub fn xi(&self) -> usize {
        self.log_sigma() + 1 + usize::from(self.continuous)
    }
    /// Index of xi_h for zero-based `h >= 1`.
    pub fn xi_of(&self, h: usize) -> Option<usize> {
        (h >= 1).then(|| self.xi() + h - 1)
    }
    /// Length of the response block.
    pub fn n_response(&self) -> usize {
        self.xi() + self.k - 1
    }
    pub fn rho(&self) -> usize {
        self.n_response()
    }
    pub fn pi(&self) -> usize {
        self.rho() + self.k
    }
    pub fn len(&self) -> usize {
        self.pi() + self.k - 1
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Parameters {
    /// Start-up parameters: cutpoints spread evenly, no covariate effects,
    /// unit scale, rho = 0.5, equal masses.
    pub fn neutral(spec: &ModelSpec) -> Self {
        let fam = spec.family;
        let n_cut = fam.n_cut();
        let cut = if fam.is_continuous() {
            vec![0.0]
        } else {
            (0..n_cut).map(|j| (n_cut as f64 - 1.0) / 2.0 - j as f64).collect()
        };
        Parameters {
            cut,
            beta: vec![0.0; spec.p],
            sigma: 1.0,
            sigma_eps2: fam.is_continuous().then_some(1.0),
            xi: vec![0.0; spec.k],
            rho: vec![0.5; spec.k],
            pi: vec![1.0 / spec.k as f64; spec.k],
        }
    }

    pub fn k(&self) -> usize {
        self.xi.len()
    }

    /// Check every structural invariant against `spec`.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let bad = |m: String| Err(MlarError::InvalidParameters(m));
        let fam = spec.family;
        if self.cut.len() != fam.n_cut() {
            return bad(format!("expected {} intercepts, got {}", fam.n_cut(), self.cut.len()));
        }
        if self.beta.len() != spec.p {
            return bad(format!("expected {} slopes, got {}", spec.p, self.beta.len()));
        }
        if self.xi.len() != spec.k || self.rho.len() != spec.k || self.pi.len() != spec.k {
            return bad(format!("latent blocks must all have length k = {}", spec.k));
        }
        let all_finite = self
            .cut
            .iter()
            .chain(&self.beta)
            .chain(&self.xi)
            .chain(&self.rho)
            .chain(&self.pi)
            .chain(std::iter::once(&self.sigma))
            .all(|v| v.is_finite());
        if !all_finite {
            return bad("non-finite entry".into());
        }
        if self.xi[0] != 0.0 {
            return bad(format!("xi_1 must be exactly 0 (got {})", self.xi[0]));
        }
        if self.sigma <= 0.0 {
            return bad(format!("sigma must be positive (got {})", self.sigma));
        }
        if let Some(r) = self.rho.iter().find(|r| r.abs() >= 1.0) {
            return bad(format!("correlations must lie in (-1, 1) (got {r})"));
        }
        if self.pi.iter().any(|&p| p <= 0.0) {
            return bad("mixture probabilities must be positive".into());
        }
        let total: f64 = self.pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("mixture probabilities sum to {total}"));
        }
        if !fam.is_continuous() && self.cut.windows(2).any(|w| w[1] > w[0]) {
            return bad("threshold intercepts must be non-increasing".into());
        }
        match (fam.is_continuous(), self.sigma_eps2) {
            (true, Some(v)) if v > 0.0 && v.is_finite() => {}
            (true, _) => return bad("continuous family needs a positive sigma_eps2".into()),
            (false, Some(_)) => return bad("sigma_eps2 is only used by the continuous family".into()),
            (false, None) => {}
        }
        Ok(())
    }

    /// Map to the unconstrained vector.
    pub fn pack(&self, spec: &ModelSpec) -> Result<Vec<f64>> {
        self.validate(spec)?;
        let lay = ParamLayout::new(spec);
        let mut out = Vec::with_capacity(lay.len());
        if lay.monotone_cut {
            out.push(self.cut[0]);
            for w in self.cut.windows(2) {
                out.push((w[0] - w[1]).ln());
            }
        } else {
            out.extend_from_slice(&self.cut);
        }
        out.extend_from_slice(&self.beta);
        out.push(self.sigma.ln());
        if let Some(v) = self.sigma_eps2 {
            out.push(v.ln());
        }
        out.extend_from_slice(&self.xi[1..]);
        out.extend(self.rho.iter().map(|r| r.atanh()));
        let log_pi1 = self.pi[0].ln();
        out.extend(self.pi[1..].iter().map(|p| p.ln() - log_pi1));
        debug_assert_eq!(out.len(), lay.len());
        if let Some(index) = out.iter().position(|v| !v.is_finite()) {
            return Err(MlarError::NonFinite { index });
        }
        Ok(out)
    }

    /// Inverse of [`Parameters::pack`]. Every result satisfies the invariants.
    pub fn unpack(v: &[f64], spec: &ModelSpec) -> Result<Self> {
        let lay = ParamLayout::new(spec);
        if v.len() != count_parameters(spec) {
            return Err(MlarError::Dimension { expected: count_parameters(spec), got: v.len() });
        }
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            return Err(MlarError::NonFinite { index });
        }
        let cut = unpack_cut(&v[..lay.n_cut], lay.monotone_cut);
        let beta = v[lay.beta()..lay.beta() + lay.p].to_vec();
        let sigma = v[lay.log_sigma()].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
        let sigma_eps2 = lay
            .log_eps()
            .map(|i| v[i].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp());
        let mut xi = Vec::with_capacity(lay.k);
        xi.push(0.0);
        xi.extend_from_slice(&v[lay.xi()..lay.xi() + lay.k - 1]);
        let rho = v[lay.rho()..lay.rho() + lay.k]
            .iter()
            .map(|u| u.clamp(-MAX_ATANH, MAX_ATANH).tanh())
            .collect();
        let pi = softmax_with_reference(&v[lay.pi()..lay.pi() + lay.k - 1]);
        Ok(Parameters { cut, beta, sigma, sigma_eps2, xi, rho, pi })
    }

    /// Reorder the components so that new component `h` is old component
    /// `perm[h]`. Support points are re-expressed relative to the new first
    /// component and the difference moves into the intercepts, which leaves
    /// the model unchanged.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let k = self.k();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&h| h >= k || std::mem::replace(&mut seen[h], true)) {
            return Err(MlarError::InvalidParameters(format!("{perm:?} is not a permutation of 0..{k}")));
        }
        let base = self.xi[perm[0]];
        Ok(Parameters {
            cut: self.cut.iter().map(|c| c + base).collect(),
            beta: self.beta.clone(),
            sigma: self.sigma,
            sigma_eps2: self.sigma_eps2,
            xi: perm.iter().map(|&h| self.xi[h] - base).collect(),
            rho: perm.iter().map(|&h| self.rho[h]).collect(),
            pi: perm.iter().map(|&h| self.pi[h]).collect(),
        })
    }

    /// Reported (constrained-scale) values with their names, in a fixed order.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let monotone = self.sigma_eps2.is_none();
        for (j, c) in self.cut.iter().enumerate() {
            let name = if monotone { format!("mu_{}", j + 2) } else { "intercept".to_string() };
            out.push((name, *c));
        }
        for (j, b) in self.beta.iter().enumerate() {
            out.push((format!("beta_{}", j + 1), *b));
        }
        out.push(("sigma".into(), self.sigma));
        if let Some(v) = self.sigma_eps2 {
            out.push(("sigma_eps2".into(), v));
        }
        for (h, x) in self.xi.iter().enumerate().skip(1) {
            out.push((format!("xi_{}", h + 1), *x));
        }
        for (h, r) in self.rho.iter().enumerate() {
            out.push((format!("rho_{}", h + 1), *r));
        }
        for (h, p) in self.pi.iter().enumerate() {
            out.push((format!("pi_{}", h + 1), *p));
        }
        out
    }
}

pub(crate) fn unpack_cut(c: &[f64], monotone: bool) -> Vec<f64> {
    if !monotone {
        return c.to_vec();
    }
    let mut cut = Vec::with_capacity(c.len());
    let mut cur = c[0];
    cut.push(cur);
    for d in &c[1..] {
        cur -= d.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
        cut.push(cur);
    }
    cut
}

/// Multinomial logit with the first category as reference.
pub(crate) fn softmax_with_reference(a: &[f64]) -> Vec<f64> {
    let max = a.iter().copied().fold(0.0_f64, f64::max);
    let mut pi: Vec<f64> = std::iter::once(0.0).chain(a.iter().copied()).map(|x| (x - max).exp()).collect();
    let total: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p = (*p / total).max(MIN_PI);
    }
    pi
}
