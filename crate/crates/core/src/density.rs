//! Marginal densities of the latent effects: the univariate mixture
//! `sum_h pi_h N(xi_h, sigma^2)` and the bivariate law of two consecutive
//! occasions, `sum_h pi_h N2(xi_h 1, sigma^2 [[1, rho_h], [rho_h, 1]])`.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;

use crate::error::{MlarError, Result};
use crate::params::Parameters;

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect(),
    }
}

/// Default plotting range: four latent SDs beyond the extreme support points.
pub fn default_range(params: &Parameters) -> (f64, f64) {
    let lo = params.xi.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = params.xi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo - 4.0 * params.sigma, hi + 4.0 * params.sigma)
}

pub fn univariate_density(params: &Parameters, grid: &[f64]) -> Vec<f64> {
    let s = params.sigma;
    let norm = 1.0 / (s * (2.0 * PI).sqrt());
    grid.iter()
        .map(|&a| {
            params
                .xi
                .iter()
                .zip(&params.pi)
                .map(|(xi, p)| {
                    let z = (a - xi) / s;
                    p * norm * (-0.5 * z * z).exp()
                })
                .sum()
        })
        .collect()
}

/// Density on `a_grid x b_grid`; rows follow `a`.
pub fn bivariate_density(params: &Parameters, a_grid: &[f64], b_grid: &[f64]) -> Array2<f64> {
    let s2 = params.sigma * params.sigma;
    Array2::from_shape_fn((a_grid.len(), b_grid.len()), |(r, c)| {
        let (a, b) = (a_grid[r], b_grid[c]);
        params
            .xi
            .iter()
            .zip(&params.rho)
            .zip(&params.pi)
            .map(|((xi, rho), p)| {
                let one_m = 1.0 - rho * rho;
                let (u, v) = (a - xi, b - xi);
                let q = (u * u - 2.0 * rho * u * v + v * v) / (s2 * one_m);
                p * (-0.5 * q).exp() / (2.0 * PI * s2 * one_m.sqrt())
            })
            .sum()
    })
}

pub fn write_univariate_csv(path: impl AsRef<Path>, grid: &[f64], dens: &[f64]) -> Result<()> {
    if grid.len() != dens.len() {
        return Err(MlarError::Dimension { expected: grid.len(), got: dens.len() });
    }
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["a", "density"])?;
    for (a, d) in grid.iter().zip(dens) {
        wtr.write_record([a.to_string(), d.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Long format `a,b,density`.
pub fn write_bivariate_csv(path: impl AsRef<Path>, a_grid: &[f64], b_grid: &[f64], dens: &Array2<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["a", "b", "density"])?;
    for (r, a) in a_grid.iter().enumerate() {
        for (c, b) in b_grid.iter().enumerate() {
            wtr.write_record([a.to_string(), b.to_string(), dens[[r, c]].to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, ResponseFamily};

    fn one(sigma: f64, rho: f64) -> Parameters {
        let spec = ModelSpec::new(ResponseFamily::BinaryLogit, 0, 1, 5).unwrap();
        let mut p = Parameters::neutral(&spec);
        p.sigma = sigma;
        p.rho = vec![rho];
        p
    }

    #[test]
    fn single_normal_is_symmetric_and_integrates() {
        let p = one(1.7, 0.5);
        let g = linspace(-8.0 * 1.7, 8.0 * 1.7, 4001);
        let d = univariate_density(&p, &g);
        for j in 0..g.len() {
            assert!((d[j] - d[g.len() - 1 - j]).abs() < 1e-15);
        }
        let h = g[1] - g[0];
        let trap: f64 = d.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
        assert!((trap - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_correlation_factorizes() {
        let p = one(0.8, 0.0);
        let g = linspace(-3.0, 3.0, 31);
        let u = univariate_density(&p, &g);
        let b = bivariate_density(&p, &g, &g);
        for r in 0..g.len() {
            for c in 0..g.len() {
                assert!((b[[r, c]] - u[r] * u[c]).abs() < 1e-10);
            }
        }
    }
}
