//! Knot grid and density weights for the standardized AR(1) latent process.
//!
//! Knots are equispaced on `[-bound, bound]`. Weights are the standard
//! normal density (first occasion) and the conditional density
//! `N(rho * nu_from, 1 - rho^2)` (later occasions), each normalized over the
//! destination knot so that every row is a proper distribution on the grid.

use ndarray::Array2;

use crate::error::{MlarError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub knots: Vec<f64>,
    pub w_init: Vec<f64>,
    /// One `q x q` row-stochastic matrix per mixture component.
    pub w_trans: Vec<Array2<f64>>,
}

impl QuadratureGrid {
    pub fn new(q: usize, bound: f64, rho: &[f64]) -> Result<Self> {
        let knots = make_knots(q, bound)?;
        Self::from_knots(knots, rho)
    }

    pub fn from_knots(knots: Vec<f64>, rho: &[f64]) -> Result<Self> {
        let w_init = initial_weights(&knots);
        let w_trans = rho
            .iter()
            .map(|&r| transition_weights(&knots, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(QuadratureGrid { knots, w_init, w_trans })
    }

    /// Rebuild only the parameter-dependent transition matrices.
    pub fn with_rho(&self, rho: &[f64]) -> Result<Self> {
        Ok(QuadratureGrid {
            knots: self.knots.clone(),
            w_init: self.w_init.clone(),
            w_trans: rho
                .iter()
                .map(|&r| transition_weights(&self.knots, r))
                .collect::<Result<Vec<_>>>()?,
        })
    }

    pub fn q(&self) -> usize {
        self.knots.len()
    }

    pub fn k(&self) -> usize {
        self.w_trans.len()
    }
}

/// `q` equispaced knots from `-bound` to `bound` inclusive.
pub fn make_knots(q: usize, bound: f64) -> Result<Vec<f64>> {
    if q < 3 {
        return Err(MlarError::InvalidSpec(format!("q must be at least 3 (got {q})")));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(MlarError::InvalidSpec(format!("knot bound must be positive (got {bound})")));
    }
    let span = (q - 1) as f64;
    // integer numerator keeps the grid exactly symmetric
    Ok((0..q)
        .map(|m| bound * (2.0 * m as f64 - span) / span)
        .collect())
}

/// Log of a normal density row `N(centre, var)` over the knots, normalized
/// over the knots. Returns the unnormalized exponents and the log normalizer.
#[inline]
fn log_kernel_row(knots: &[f64], centre: f64, var: f64, out: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (o, &nu) in out.iter_mut().zip(knots) {
        let d = nu - centre;
        *o = -(d * d) / (2.0 * var);
        max = max.max(*o);
    }
    let s: f64 = out.iter().map(|g| (g - max).exp()).sum();
    max + s.ln()
}

fn normalized_row(knots: &[f64], centre: f64, var: f64) -> Vec<f64> {
    let mut g = vec![0.0; knots.len()];
    let lse = log_kernel_row(knots, centre, var, &mut g);
    g.iter().map(|x| (x - lse).exp()).collect()
}

/// Self-normalized standard normal weights on the knots.
pub fn initial_weights(knots: &[f64]) -> Vec<f64> {
    normalized_row(knots, 0.0, 1.0)
}

/// Row `m1` is the conditional density of the next knot given `knots[m1]`.
pub fn transition_weights(knots: &[f64], rho: f64) -> Result<Array2<f64>> {
    check_rho(rho)?;
    let q = knots.len();
    let var = 1.0 - rho * rho;
    let mut w = Array2::zeros((q, q));
    for (m1, &from) in knots.iter().enumerate() {
        let row = normalized_row(knots, rho * from, var);
        w.row_mut(m1).assign(&ndarray::Array1::from(row));
    }
    Ok(w)
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(MlarError::InvalidParameters(format!("|rho| must be below 1 (got {rho})")))
    }
}

/// `sum_{m1,m2} F[m1,m2] * ln w[m1,m2](rho)` and its derivative in `rho`.
///
/// Log weights are formed from the exponents directly, so entries whose
/// weight underflows still contribute finite terms.
pub fn transition_objective(f: &Array2<f64>, knots: &[f64], rho: f64) -> Result<(f64, f64)> {
    check_rho(rho)?;
    let q = knots.len();
    let var = 1.0 - rho * rho;
    let mut g = vec![0.0; q];
    let mut value = 0.0;
    let mut deriv = 0.0;
    for (m1, &a) in knots.iter().enumerate() {
        let row = f.row(m1);
        let mass: f64 = row.sum();
        if mass == 0.0 {
            continue;
        }
        let lse = log_kernel_row(knots, rho * a, var, &mut g);
        let mut weighted_g = 0.0;
        let mut mean_dg = 0.0;
        let mut fdg = 0.0;
        for (m2, &b) in knots.iter().enumerate() {
            let r = b - rho * a;
            let dg = r * a / var - rho * r * r / (var * var);
            mean_dg += (g[m2] - lse).exp() * dg;
            weighted_g += row[m2] * g[m2];
            fdg += row[m2] * dg;
        }
        value += weighted_g - mass * lse;
        deriv += fdg - mass * mean_dg;
    }
    Ok((value, deriv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entropy(row: ndarray::ArrayView1<f64>) -> f64 {
        row.iter().filter(|&&w| w > 0.0).map(|w| -w * w.ln()).sum()
    }

    #[test]
    fn three_knots() {
        assert_eq!(make_knots(3, 5.0).unwrap(), vec![-5.0, 0.0, 5.0]);
    }

    #[test]
    fn five_unit_knots() {
        assert_eq!(make_knots(5, 1.0).unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn default_grid_spacing() {
        let k = make_knots(21, 5.0).unwrap();
        assert_eq!(k[0], -5.0);
        assert_eq!(k[20], 5.0);
        assert_eq!(k[10], 0.0);
        for w in k.windows(2) {
            assert!((w[1] - w[0] - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn knots_symmetric() {
        for q in [3, 4, 21, 30, 61] {
            let k = make_knots(q, 5.0).unwrap();
            for m in 0..q {
                assert_eq!(k[m], -k[q - 1 - m]);
            }
        }
    }

    #[test]
    fn too_few_knots_rejected() {
        assert!(make_knots(2, 5.0).is_err());
        assert!(make_knots(5, -1.0).is_err());
    }

    #[test]
    fn initial_weights_three_knots() {
        // phi(5)/phi(0) = exp(-12.5)
        let e = (-12.5f64).exp();
        let w = initial_weights(&[-5.0, 0.0, 5.0]);
        let expected = [e / (1.0 + 2.0 * e), 1.0 / (1.0 + 2.0 * e), e / (1.0 + 2.0 * e)];
        for (a, b) in w.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((w[0] - 3.7266e-6).abs() < 1e-9);
        assert!((w[1] - 0.99999255).abs() < 1e-8);
    }

    #[test]
    fn zero_rho_rows_equal_initial() {
        let knots = make_knots(21, 5.0).unwrap();
        let w0 = initial_weights(&knots);
        let t = transition_weights(&knots, 0.0).unwrap();
        for row in t.rows() {
            assert_eq!(row.to_vec(), w0);
        }
    }

    #[test]
    fn transition_symmetry() {
        let knots = make_knots(11, 5.0).unwrap();
        let q = knots.len();
        for rho in [-0.7, 0.3, 0.9] {
            let t = transition_weights(&knots, rho).unwrap();
            for a in 0..q {
                for b in 0..q {
                    assert!((t[[a, b]] - t[[q - 1 - a, q - 1 - b]]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn high_persistence_peaks_near_scaled_knot() {
        let knots = make_knots(21, 5.0).unwrap();
        let t = transition_weights(&knots, 0.999).unwrap();
        for (m1, &from) in knots.iter().enumerate() {
            let target = from * 0.999;
            let nearest = (0..21)
                .min_by(|&a, &b| (knots[a] - target).abs().total_cmp(&(knots[b] - target).abs()))
                .unwrap();
            let argmax = (0..21).max_by(|&a, &b| t[[m1, a]].total_cmp(&t[[m1, b]])).unwrap();
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn row_stochastic_everywhere() {
        for q in [3, 21, 61] {
            let knots = make_knots(q, 5.0).unwrap();
            assert!((initial_weights(&knots).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for rho in [-0.95, -0.5, 0.0, 0.5, 0.95] {
                let t = transition_weights(&knots, rho).unwrap();
                assert!(t.iter().all(|&w| w >= 0.0));
                for row in t.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn entropy_shrinks_with_persistence() {
        let knots = make_knots(41, 5.0).unwrap();
        let mats: Vec<_> = [0.0, 0.5, 0.9, 0.99]
            .iter()
            .map(|&r| transition_weights(&knots, r).unwrap())
            .collect();
        for m1 in 0..knots.len() {
            for pair in mats.windows(2) {
                assert!(entropy(pair[1].row(m1)) <= entropy(pair[0].row(m1)) + 1e-12);
            }
        }
    }

    #[test]
    fn unit_rho_rejected() {
        let knots = make_knots(5, 5.0).unwrap();
        assert!(transition_weights(&knots, 1.0).is_err());
        assert!(transition_weights(&knots, -1.2).is_err());
    }

    #[test]
    fn objective_derivative_matches_differences() {
        let knots = make_knots(15, 4.0).unwrap();
        let f = Array2::from_shape_fn((15, 15), |(a, b)| 1.0 + ((a * 7 + b * 3) % 5) as f64);
        for rho in [-0.6, 0.1, 0.8, 0.97] {
            let (_, d) = transition_objective(&f, &knots, rho).unwrap();
            let h = 1e-6;
            let (up, _) = transition_objective(&f, &knots, rho + h).unwrap();
            let (dn, _) = transition_objective(&f, &knots, rho - h).unwrap();
            let fd = (up - dn) / (2.0 * h);
            assert!((d - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{rho}: {d} vs {fd}");
        }
    }

    #[test]
    fn objective_matches_log_of_weights() {
        let knots = make_knots(9, 5.0).unwrap();
        let rho = 0.4;
        let w = transition_weights(&knots, rho).unwrap();
        let f = Array2::from_shape_fn((9, 9), |(a, b)| (a + 2 * b) as f64 * 0.1);
        let direct: f64 = f.iter().zip(w.iter()).map(|(f, w)| f * w.ln()).sum();
        let (v, _) = transition_objective(&f, &knots, rho).unwrap();
        assert!((v - direct).abs() < 1e-10 * direct.abs());
    }
}
