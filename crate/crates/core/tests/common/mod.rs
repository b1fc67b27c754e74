//! Shared helpers: random small instances and from-scratch oracles that do
//! not go through the library's likelihood code.
#![allow(dead_code)]

use mlar::{Dataset, ModelSpec, Parameters, ResponseFamily};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn all_families() -> Vec<ResponseFamily> {
    vec![
        ResponseFamily::Continuous,
        ResponseFamily::BinaryLogit,
        ResponseFamily::BinaryProbit,
        ResponseFamily::OrdinalLogit { categories: 4 },
        ResponseFamily::OrdinalProbit { categories: 3 },
    ]
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_params(spec: &ModelSpec, rng: &mut impl Rng) -> Parameters {
    let fam = spec.family;
    let n_cut = fam.n_cut();
    let cut = if fam.is_continuous() {
        vec![rng.random_range(-1.0..1.0)]
    } else {
        let mut c = vec![rng.random_range(-0.5..1.5)];
        for _ in 1..n_cut {
            let last = *c.last().unwrap();
            c.push(last - rng.random_range(0.3..1.5));
        }
        c
    };
    let k = spec.k;
    let mut xi = vec![0.0];
    xi.extend((1..k).map(|_| rng.random_range(-1.5..1.5)));
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    Parameters {
        cut,
        beta: (0..spec.p).map(|_| rng.random_range(-1.0..1.0)).collect(),
        sigma: rng.random_range(0.4..2.0),
        sigma_eps2: fam.is_continuous().then(|| rng.random_range(0.3..2.0)),
        xi,
        rho: (0..k).map(|_| rng.random_range(-0.9..0.95)).collect(),
        pi: raw.iter().map(|r| r / s).collect(),
    }
}

pub fn random_response(family: ResponseFamily, rng: &mut impl Rng) -> f64 {
    match family {
        ResponseFamily::Continuous => rng.random_range(-3.0..3.0),
        ResponseFamily::BinaryLogit | ResponseFamily::BinaryProbit => rng.random_range(0..2) as f64,
        ResponseFamily::OrdinalLogit { categories } | ResponseFamily::OrdinalProbit { categories } => {
            rng.random_range(1..=categories) as f64
        }
    }
}

pub fn random_data(family: ResponseFamily, n: usize, t: usize, p: usize, rng: &mut impl Rng) -> Dataset {
    let y = Array2::from_shape_fn((n, t), |_| random_response(family, rng));
    let x = Array3::from_shape_fn((n, t, p), |_| rng.random_range(-1.0..1.0));
    Dataset::new(y, x).unwrap()
}

/// A random small instance (n <= 4, T <= 3, q <= 5, k <= 2).
pub fn random_instance(family: ResponseFamily, rng: &mut impl Rng) -> (ModelSpec, Parameters, Dataset) {
    let n = rng.random_range(1..=4);
    let t = rng.random_range(1..=3);
    let q = rng.random_range(3..=5);
    let k = rng.random_range(1..=2);
    let p = rng.random_range(0..=2);
    let bound = rng.random_range(1.0..5.0);
    let spec = ModelSpec::new(family, p, k, q).unwrap().with_bound(bound).unwrap();
    let params = random_params(&spec, rng);
    let data = random_data(family, n, t, p, rng);
    (spec, params, data)
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn knots(q: usize, bound: f64) -> Vec<f64> {
    (0..q).map(|m| -bound + 2.0 * bound * m as f64 / (q - 1) as f64).collect()
}

pub fn init_weights(nu: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = nu.iter().map(|&v| phi(v)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

pub fn trans_weights(nu: &[f64], rho: f64) -> Vec<Vec<f64>> {
    let sd = (1.0 - rho * rho).sqrt();
    nu.iter()
        .map(|&a| {
            let row: Vec<f64> = nu.iter().map(|&b| phi((b - rho * a) / sd)).collect();
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn cdf(family: ResponseFamily, x: f64) -> f64 {
    match family {
        ResponseFamily::BinaryLogit | ResponseFamily::OrdinalLogit { .. } => 1.0 / (1.0 + (-x).exp()),
        _ => Normal::new(0.0, 1.0).unwrap().cdf(x),
    }
}

/// `p(y | eta)` written out directly: cumulative link `P(y >= j) = F(mu_j + eta)`,
/// binary `P(y = 1) = F(mu + eta)`, continuous `N(mu + eta, sigma_eps^2)`.
pub fn response_prob(family: ResponseFamily, params: &Parameters, y: f64, eta: f64) -> f64 {
    match family {
        ResponseFamily::Continuous => {
            let v = params.sigma_eps2.unwrap();
            phi((y - params.cut[0] - eta) / v.sqrt()) / v.sqrt()
        }
        ResponseFamily::BinaryLogit | ResponseFamily::BinaryProbit => {
            let p1 = cdf(family, params.cut[0] + eta);
            if y == 1.0 {
                p1
            } else {
                1.0 - p1
            }
        }
        _ => {
            let j = y as usize;
            let upper = |c: usize| -> f64 {
                // P(y >= c)
                if c <= 1 {
                    1.0
                } else if c > params.cut.len() + 1 {
                    0.0
                } else {
                    cdf(family, params.cut[c - 2] + eta)
                }
            };
            upper(j) - upper(j + 1)
        }
    }
}

pub fn eta(params: &Parameters, data: &Dataset, i: usize, t: usize, h: usize, nu: f64) -> f64 {
    let xb: f64 = (0..data.p()).map(|j| data.x[[i, t, j]] * params.beta[j]).sum();
    params.xi[h] + nu * params.sigma + xb
}

/// `p^(h)(y_i)` by enumerating all `q^T` knot paths.
pub fn brute_component(spec: &ModelSpec, params: &Parameters, data: &Dataset, i: usize, h: usize) -> f64 {
    let nu = knots(spec.q, spec.knot_bound);
    let w0 = init_weights(&nu);
    let wt = trans_weights(&nu, params.rho[h]);
    let (q, t_len) = (nu.len(), data.t());
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    for code in 0..q.pow(t_len as u32) {
        let mut c = code;
        for m in path.iter_mut() {
            *m = c % q;
            c /= q;
        }
        let mut prob = w0[path[0]];
        for t in 0..t_len {
            if t > 0 {
                prob *= wt[path[t - 1]][path[t]];
            }
            prob *= response_prob(spec.family, params, data.y[[i, t]], eta(params, data, i, t, h, nu[path[t]]));
        }
        total += prob;
    }
    total
}

pub fn brute_loglik(spec: &ModelSpec, params: &Parameters, data: &Dataset) -> f64 {
    (0..data.n())
        .map(|i| {
            let mix: f64 = (0..spec.k).map(|h| params.pi[h] * brute_component(spec, params, data, i, h)).sum();
            mix.ln()
        })
        .sum()
}

/// `|a - b| / max(|b|, 1)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Pure relative error, for quantities bounded away from zero.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
