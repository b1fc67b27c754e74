//! Descriptive summaries of a panel.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::ResponseFamily;

/// Covariates with at most this many distinct whole-number values get
/// category shares.
const MAX_LEVELS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// `(value, percentage)` for discrete covariates.
    pub shares: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub t: usize,
    pub p: usize,
    /// Category labels (0/1 for binary, 1..J for ordinal).
    pub categories: Vec<f64>,
    /// Percentage of each category per occasion, `T x J`.
    pub occasion_distribution: Vec<Vec<f64>>,
    /// Pooled transitions over consecutive occasions in percent; row `a`
    /// is the distribution at t given category `a` at t - 1. Rows with no
    /// observations are all zero.
    pub transition_matrix: Vec<Vec<f64>>,
    /// Response mean and SD per occasion (continuous family).
    pub occasion_moments: Option<Vec<(f64, f64)>>,
    pub covariates: Vec<CovariateSummary>,
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn summarize(data: &Dataset, family: ResponseFamily, covariate_names: Option<&[String]>) -> Summary {
    let (n, n_t, p) = (data.n(), data.t(), data.p());
    let categories: Vec<f64> = if family.is_continuous() {
        Vec::new()
    } else if family.is_binary() {
        vec![0.0, 1.0]
    } else {
        (1..=family.categories()).map(|c| c as f64).collect()
    };
    let j = categories.len();
    let index = |y: f64| categories.iter().position(|&c| c == y);

    let mut occasion_distribution = vec![vec![0.0; j]; if j > 0 { n_t } else { 0 }];
    let mut counts = vec![vec![0usize; j]; j];
    if j > 0 {
        for t in 0..n_t {
            for i in 0..n {
                if let Some(c) = index(data.y[[i, t]]) {
                    occasion_distribution[t][c] += 100.0 / n as f64;
                }
                if t > 0 {
                    if let (Some(a), Some(b)) = (index(data.y[[i, t - 1]]), index(data.y[[i, t]])) {
                        counts[a][b] += 1;
                    }
                }
            }
        }
    }
    let transition_matrix = counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 })
                .collect()
        })
        .collect();
    let occasion_moments = family
        .is_continuous()
        .then(|| (0..n_t).map(|t| moments(&data.y.column(t).to_vec())).collect());

    let covariates = (0..p)
        .map(|k| {
            let v: Vec<f64> = data.x.index_axis(ndarray::Axis(2), k).iter().copied().collect();
            let (mean, sd) = moments(&v);
            let mut levels: Vec<f64> = Vec::new();
            let discrete = v.iter().all(|x| x.fract() == 0.0)
                && v.iter().all(|x| {
                    if !levels.contains(x) {
                        levels.push(*x);
                    }
                    levels.len() <= MAX_LEVELS
                });
            let shares = discrete.then(|| {
                levels.sort_by(f64::total_cmp);
                levels
                    .iter()
                    .map(|l| (*l, 100.0 * v.iter().filter(|x| *x == l).count() as f64 / v.len() as f64))
                    .collect()
            });
            let name = covariate_names
                .and_then(|names| names.get(k).cloned())
                .unwrap_or_else(|| format!("x{}", k + 1));
            CovariateSummary { name, mean, sd, shares }
        })
        .collect();

    Summary { n, t: n_t, p, categories, occasion_distribution, transition_matrix, occasion_moments, covariates }
}
