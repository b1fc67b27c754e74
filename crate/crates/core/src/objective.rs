//! Weighted conditional log-likelihood of the responses,
//! `sum_{i,t,h,m} r_ithm * ln p(y_it | h, nu_m, x_it)`,
//! with analytic gradient and Hessian in the unconstrained response block.
//!
//! Per occasion the derivatives of every (component, knot) cell live in a
//! small local basis (the two cutpoint directions, the covariate direction,
//! ln sigma and the free support points); the local sums are expanded into
//! the full coordinates once per occasion.

use nalgebra::DMatrix;
use ndarray::Array4;

use crate::data::Dataset;
use crate::em::CellSource;
use crate::error::{MlarError, Result};
use crate::model::{ModelSpec, ResponseFamily};
use crate::optim::{Evaluation, Need};
use crate::par;
use crate::params::{unpack_cut, ParamLayout, MAX_ATANH};
use crate::response::{category_cuts, category_of, cell_kernel, cell_logprob};

const MAX_LOG: f64 = 700.0;

/// Coordinates of the response block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RespLayout {
    pub n_cut: usize,
    pub monotone: bool,
    pub p: usize,
    pub has_sigma: bool,
    pub has_eps: bool,
    pub k: usize,
}

impl RespLayout {
    pub fn for_spec(spec: &ModelSpec) -> Self {
        let lay = ParamLayout::new(spec);
        RespLayout {
            n_cut: lay.n_cut,
            monotone: lay.monotone_cut,
            p: lay.p,
            has_sigma: true,
            has_eps: lay.continuous,
            k: lay.k,
        }
    }

    /// Intercepts and slopes only (plus the error variance when continuous).
    pub fn pooled(spec: &ModelSpec) -> Self {
        RespLayout { has_sigma: false, k: 1, ..Self::for_spec(spec) }
    }

    fn sigma(&self) -> Option<usize> {
        self.has_sigma.then_some(self.n_cut + self.p)
    }
    fn eps(&self) -> Option<usize> {
        self.has_eps
            .then_some(self.n_cut + self.p + usize::from(self.has_sigma))
    }
    fn xi(&self) -> usize {
        self.n_cut + self.p + usize::from(self.has_sigma) + usize::from(self.has_eps)
    }
    pub fn len(&self) -> usize {
        self.xi() + self.k - 1
    }
}

#[derive(Clone, Copy)]
pub(crate) enum Weights<'a> {
    /// Posterior cell weights, shape `n x T x k x q`.
    Posterior(&'a Array4<f64>),
    /// The same weights, recomputed per subject on every evaluation.
    Recompute(&'a CellSource<'a>),
    /// Unit weight per occasion at a single knot `nu = 0` (pooled fit).
    Unit,
}

pub(crate) struct ResponseObjective<'a> {
    pub family: ResponseFamily,
    pub data: &'a Dataset,
    pub knots: &'a [f64],
    pub weights: Weights<'a>,
    pub layout: RespLayout,
}

struct Decoded {
    cut: Vec<f64>,
    /// d mu_j / d c_l as sparse lists, one per intercept.
    dcut: Vec<Vec<(usize, f64)>>,
    /// d2 mu_j / d c_l^2 (diagonal), one list per intercept.
    d2cut: Vec<Vec<(usize, f64)>>,
    beta: Vec<f64>,
    sigma: f64,
    log_eps: f64,
    xi: Vec<f64>,
}

struct Acc {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl<'a> ResponseObjective<'a> {
    fn decode(&self, theta: &[f64]) -> Result<Decoded> {
        let lay = &self.layout;
        if theta.len() != lay.len() {
            return Err(MlarError::Dimension { expected: lay.len(), got: theta.len() });
        }
        if let Some(index) = theta.iter().position(|v| !v.is_finite()) {
            return Err(MlarError::NonFinite { index });
        }
        let c = &theta[..lay.n_cut];
        let cut = unpack_cut(c, lay.monotone);
        let mut dcut = Vec::with_capacity(lay.n_cut);
        let mut d2cut = Vec::with_capacity(lay.n_cut);
        for j in 0..lay.n_cut {
            let mut d = vec![(0, 1.0)];
            let mut d2 = Vec::new();
            if lay.monotone {
                for (l, cl) in c.iter().enumerate().take(j + 1).skip(1) {
                    let e = -cl.clamp(-MAX_LOG, MAX_LOG).exp();
                    d.push((l, e));
                    d2.push((l, e));
                }
            }
            dcut.push(d);
            d2cut.push(d2);
        }
        let beta = theta[lay.n_cut..lay.n_cut + lay.p].to_vec();
        let sigma = lay.sigma().map(|i| theta[i].clamp(-MAX_LOG, MAX_LOG).exp()).unwrap_or(0.0);
        let log_eps = lay.eps().map(|i| theta[i].clamp(-MAX_LOG, MAX_LOG)).unwrap_or(0.0);
        let mut xi = vec![0.0];
        xi.extend_from_slice(&theta[lay.xi()..lay.xi() + lay.k - 1]);
        Ok(Decoded { cut, dcut, d2cut, beta, sigma, log_eps, xi })
    }

    pub fn eval(&self, theta: &[f64], need: Need) -> Result<Evaluation> {
        let dec = self.decode(theta)?;
        let d = self.layout.len();
        let n = self.data.n();
        let want_hess = need == Need::Hessian;
        let want_grad = need != Need::Value;
        let acc = par::fold_reduce(
            n,
            || Acc {
                value: 0.0,
                grad: if want_grad { vec![0.0; d] } else { Vec::new() },
                hess: if want_hess { vec![0.0; d * d] } else { Vec::new() },
            },
            |acc, i| self.add_subject(&dec, i, need, acc),
            |a, b| {
                a.value += b.value;
                a.grad.iter_mut().zip(&b.grad).for_each(|(x, y)| *x += y);
                a.hess.iter_mut().zip(&b.hess).for_each(|(x, y)| *x += y);
            },
        );
        if !acc.value.is_finite() {
            return Err(MlarError::Numerical("response objective is not finite".into()));
        }
        let hess = want_hess.then(|| DMatrix::from_row_slice(d, d, &acc.hess));
        Ok(Evaluation { value: acc.value, grad: acc.grad, hess })
    }

    fn add_subject(&self, dec: &Decoded, i: usize, need: Need, acc: &mut Acc) {
        let lay = &self.layout;
        let data = self.data;
        let fam = self.family;
        let n_t = data.t();
        let k = lay.k;
        let d = lay.len();
        let continuous = fam.is_continuous();
        // local slots: 0 = A cut dir, 1 = B dir, 2 = covariates, 3 = ln sigma, 4.. = xi_h
        let nl = 4 + k - 1;
        let mut g_loc = vec![0.0; nl];
        let mut h_loc = vec![0.0; nl * nl];
        let q = self.knots.len();
        let mut cells = Vec::new();
        if let Weights::Recompute(src) = self.weights {
            cells = vec![0.0; n_t * k * q];
            if src.fill(i, &mut cells).is_err() {
                acc.value = f64::NAN;
                return;
            }
        }

        for t in 0..n_t {
            let y = data.y[[i, t]];
            let x = data.covariates(i, t);
            let xb: f64 = x.iter().zip(&dec.beta).map(|(a, b)| a * b).sum();
            let (ia, ib) = if continuous {
                (Some(0), None)
            } else {
                category_cuts(category_of(fam, y), fam.categories())
            };
            g_loc.iter_mut().for_each(|v| *v = 0.0);
            h_loc.iter_mut().for_each(|v| *v = 0.0);
            let mut sum_da = 0.0;
            let mut sum_db = 0.0;

            // Every cell has gradient directions ga = a0 + ns e3 and
            // gb = b0 + bs ns e3 (bs = 0 for the continuous family, whose B
            // argument does not involve eta), with a0, b0 fixed per
            // component, so weighted moments in ns suffice.
            let bs = if continuous { 0.0 } else { 1.0 };
            for h in 0..k {
                let mut mom = [0.0f64; 13];
                for (m, &nu) in self.knots.iter().enumerate() {
                    let w = match self.weights {
                        Weights::Posterior(r) => r[[i, t, h, m]],
                        Weights::Recompute(_) => cells[(t * k + h) * q + m],
                        Weights::Unit => 1.0,
                    };
                    if w == 0.0 {
                        continue;
                    }
                    let ns = nu * dec.sigma;
                    let eta = dec.xi[h] + ns + xb;
                    if need == Need::Value {
                        acc.value += w * cell_logprob(fam, &dec.cut, dec.log_eps, y, eta);
                        continue;
                    }
                    let kern = cell_kernel(fam, &dec.cut, dec.log_eps, y, eta);
                    acc.value += w * kern.logp;
                    let (wa, wb) = (w * kern.da, w * kern.db);
                    mom[0] += wa;
                    mom[1] += wb;
                    mom[2] += wa * ns;
                    mom[3] += wb * ns;
                    if need == Need::Hessian {
                        let (caa, cab, cbb) = (w * kern.daa, w * kern.dab, w * kern.dbb);
                        let ns2 = ns * ns;
                        mom[4] += caa;
                        mom[5] += caa * ns;
                        mom[6] += caa * ns2;
                        mom[7] += cab;
                        mom[8] += cab * ns;
                        mom[9] += cab * ns2;
                        mom[10] += cbb;
                        mom[11] += cbb * ns;
                        mom[12] += cbb * ns2;
                    }
                }
                if need == Need::Value {
                    continue;
                }
                let mut a0 = vec![0.0; nl];
                a0[0] = 1.0;
                a0[2] = 1.0;
                if h >= 1 {
                    a0[3 + h] = 1.0;
                }
                let mut b0 = vec![0.0; nl];
                b0[1] = 1.0;
                if !continuous {
                    b0[2] = 1.0;
                    if h >= 1 {
                        b0[3 + h] = 1.0;
                    }
                }
                sum_da += mom[0];
                sum_db += mom[1];
                for r in 0..nl {
                    g_loc[r] += mom[0] * a0[r] + mom[1] * b0[r];
                }
                g_loc[3] += mom[2] + bs * mom[3];
                if need == Need::Hessian {
                    let [_, _, _, _, caa0, caa1, caa2, cab0, cab1, cab2, cbb0, cbb1, cbb2] = mom;
                    // coefficient of e3 in the "slope" parts of ga and gb
                    for r in 0..nl {
                        let (ar, br) = (a0[r], b0[r]);
                        let e3r = if r == 3 { 1.0 } else { 0.0 };
                        let row = &mut h_loc[r * nl..(r + 1) * nl];
                        for c in 0..nl {
                            let (ac, bc) = (a0[c], b0[c]);
                            let e3c = if c == 3 { 1.0 } else { 0.0 };
                            row[c] += caa0 * ar * ac
                                + caa1 * (ar * e3c + e3r * ac)
                                + caa2 * e3r * e3c
                                + cab0 * (ar * bc + br * ac)
                                + cab1 * (bs * (ar * e3c + e3r * ac) + (e3r * bc + br * e3c))
                                + cab2 * 2.0 * bs * e3r * e3c
                                + cbb0 * br * bc
                                + cbb1 * bs * (br * e3c + e3r * bc)
                                + cbb2 * bs * e3r * e3c;
                        }
                    }
                    // d2 eta / d(ln sigma)^2 = nu * sigma
                    h_loc[3 * nl + 3] += mom[2] + bs * mom[3];
                }
            }
            if need == Need::Value {
                continue;
            }

            // expand the local basis into full coordinates
            let dir_a: &[(usize, f64)] = ia.map(|j| dec.dcut[j].as_slice()).unwrap_or(&[]);
            let eps_dir = lay.eps().map(|e| [(e, 1.0)]);
            let dir_b: &[(usize, f64)] = if continuous {
                eps_dir.as_ref().map(|v| v.as_slice()).unwrap_or(&[])
            } else {
                ib.map(|j| dec.dcut[j].as_slice()).unwrap_or(&[])
            };
            let dir_x: Vec<(usize, f64)> = x.iter().enumerate().map(|(j, v)| (lay.n_cut + j, *v)).collect();
            let sig_dir = lay.sigma().map(|s| [(s, 1.0)]);
            let dir_s: &[(usize, f64)] = sig_dir.as_ref().map(|v| v.as_slice()).unwrap_or(&[]);
            let xi_dirs: Vec<[(usize, f64); 1]> = (1..k).map(|h| [(lay.xi() + h - 1, 1.0)]).collect();
            let mut dirs: Vec<&[(usize, f64)]> = vec![dir_a, dir_b, &dir_x, dir_s];
            dirs.extend(xi_dirs.iter().map(|v| v.as_slice()));

            for (r, dir) in dirs.iter().enumerate() {
                for &(idx, v) in dir.iter() {
                    acc.grad[idx] += g_loc[r] * v;
                }
            }
            if need == Need::Hessian {
                for (r, dr) in dirs.iter().enumerate() {
                    for (c, dc) in dirs.iter().enumerate() {
                        let l = h_loc[r * nl + c];
                        if l == 0.0 {
                            continue;
                        }
                        for &(i1, v1) in dr.iter() {
                            let row = &mut acc.hess[i1 * d..(i1 + 1) * d];
                            for &(i2, v2) in dc.iter() {
                                row[i2] += l * v1 * v2;
                            }
                        }
                    }
                }
                if let Some(j) = ia {
                    for &(l, v) in &dec.d2cut[j] {
                        acc.hess[l * d + l] += sum_da * v;
                    }
                }
                if !continuous {
                    if let Some(j) = ib {
                        for &(l, v) in &dec.d2cut[j] {
                            acc.hess[l * d + l] += sum_db * v;
                        }
                    }
                }
            }
        }
    }
}

/// Clamp an atanh coordinate into the range produced by unpacking.
pub(crate) fn clamp_atanh(u: f64) -> f64 {
    u.clamp(-MAX_ATANH, MAX_ATANH)
}
