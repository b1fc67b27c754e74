//! Posterior prediction of the latent effects.

use ndarray::Array2;

use crate::data::Dataset;
use crate::em::subject_estep;
use crate::error::{MlarError, Result};
use crate::model::ModelSpec;
use crate::par;
use crate::params::Parameters;
use crate::quadrature::QuadratureGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSurface {
    /// Posterior means `E(alpha_it | data)`, `n x T`.
    pub alpha_hat: Array2<f64>,
    /// Most probable component per subject (zero-based).
    pub component_map: Vec<usize>,
    /// Component posteriors, `n x k`.
    pub w_hat: Array2<f64>,
}

impl PredictionSurface {
    /// Bounds every prediction must respect for the given parameters.
    pub fn hull(params: &Parameters, knots: &[f64]) -> (f64, f64) {
        let lo = params.xi.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = params.xi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo + knots[0] * params.sigma, hi + knots[knots.len() - 1] * params.sigma)
    }
}

/// `alpha_hat_it = sum_h sum_m E(w_ih z_imt | data) (xi_h + nu_m sigma)`.
pub fn predict_alpha(spec: &ModelSpec, data: &Dataset, params: &Parameters) -> Result<PredictionSurface> {
    let grid = QuadratureGrid::new(spec.q, spec.knot_bound, &params.rho)?;
    predict_with_grid(spec, data, params, &grid)
}

pub fn predict_with_grid(
    spec: &ModelSpec,
    data: &Dataset,
    params: &Parameters,
    grid: &QuadratureGrid,
) -> Result<PredictionSurface> {
    let (n, n_t, k) = (data.n(), data.t(), params.k());
    if grid.k() != k {
        return Err(MlarError::Dimension { expected: k, got: grid.k() });
    }
    let q = grid.q();
    let (lo, hi) = PredictionSurface::hull(params, &grid.knots);
    // one subject at a time, so memory stays O(n T + n k)
    let rows = par::map_collect(n, |i| -> Result<(Vec<f64>, Vec<f64>)> {
        let post = subject_estep(spec, data, params, grid, i, None)?;
        if !post.loglik.is_finite() || post.w.iter().any(|w| !w.is_finite()) {
            return Err(MlarError::Numerical("non-finite posterior quantities".into()));
        }
        let alpha = (0..n_t)
            .map(|t| {
                let mut s = 0.0;
                for h in 0..k {
                    for (m, &nu) in grid.knots.iter().enumerate() {
                        s += post.w[h] * post.occ[(h * n_t + t) * q + m] * (params.xi[h] + nu * params.sigma);
                    }
                }
                // a convex combination; clamp away last-bit rounding
                s.clamp(lo, hi)
            })
            .collect();
        Ok((alpha, post.w))
    });
    let mut alpha_hat = Array2::zeros((n, n_t));
    let mut w_hat = Array2::zeros((n, k));
    for (i, row) in rows.into_iter().enumerate() {
        let (alpha, w) = row?;
        alpha_hat.row_mut(i).assign(&ndarray::Array1::from(alpha));
        w_hat.row_mut(i).assign(&ndarray::Array1::from(w));
    }
    let component_map = (0..n)
        .map(|i| {
            let row = w_hat.row(i);
            (0..k).fold(0, |best, h| if row[h] > row[best] { h } else { best })
        })
        .collect();
    Ok(PredictionSurface { alpha_hat, component_map, w_hat })
}

/// Pearson correlation of two equally sized samples. Returns NaN when either
/// sample has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "samples must have equal length");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}
