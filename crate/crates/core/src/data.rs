//! Balanced panel container and validation.

use ndarray::{concatenate, Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MlarError, Result};
use crate::model::{ModelSpec, ResponseFamily};

/// A balanced, fully observed panel of `n` subjects over `t` occasions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Responses, `n x t`. Categories are stored as whole numbers.
    pub y: Array2<f64>,
    /// Covariates, `n x t x p`.
    pub x: Array3<f64>,
    /// External subject labels, one per row.
    pub ids: Vec<String>,
}

/// A single validation failure. Coordinates are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: usize,
    pub time: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ViolationKind {
    ResponseOutOfRange { value: f64 },
    NonFiniteResponse,
    NonFiniteCovariate { covariate: usize },
    CovariateCount { expected: usize, got: usize },
    Empty,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(subject {}, time {}): {:?}", self.subject, self.time, self.kind)
    }
}

impl Dataset {
    pub fn new(y: Array2<f64>, x: Array3<f64>) -> Result<Self> {
        let (n, t) = y.dim();
        let ids = (1..=n).map(|i| i.to_string()).collect();
        Self::with_ids(y, x, ids).map_err(|e| match e {
            MlarError::InvalidSpec(m) => MlarError::InvalidSpec(format!("{m} (y is {n}x{t})")),
            other => other,
        })
    }

    pub fn with_ids(y: Array2<f64>, x: Array3<f64>, ids: Vec<String>) -> Result<Self> {
        let (n, t) = y.dim();
        let (xn, xt, _) = x.dim();
        if xn != n || xt != t {
            return Err(MlarError::InvalidSpec(format!(
                "covariate array is {xn}x{xt}, responses are {n}x{t}"
            )));
        }
        if ids.len() != n {
            return Err(MlarError::Dimension { expected: n, got: ids.len() });
        }
        Ok(Dataset { y, x, ids })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn t(&self) -> usize {
        self.y.ncols()
    }

    pub fn p(&self) -> usize {
        self.x.dim().2
    }

    pub fn covariates(&self, i: usize, t: usize) -> ArrayView1<'_, f64> {
        self.x.slice(ndarray::s![i, t, ..])
    }

    /// 1-based category of a threshold response (binary 0/1 maps to 1/2).
    #[inline]
    pub fn category(&self, family: ResponseFamily, i: usize, t: usize) -> usize {
        let y = self.y[[i, t]];
        if family.is_binary() {
            y as usize + 1
        } else {
            y as usize
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn stack(&self, other: &Dataset) -> Result<Dataset> {
        let y = concatenate(Axis(0), &[self.y.view(), other.y.view()])
            .map_err(|e| MlarError::InvalidSpec(e.to_string()))?;
        let x = concatenate(Axis(0), &[self.x.view(), other.x.view()])
            .map_err(|e| MlarError::InvalidSpec(e.to_string()))?;
        let ids = self
            .ids
            .iter()
            .cloned()
            .chain(other.ids.iter().map(|s| format!("{s}'")))
            .collect();
        Dataset::with_ids(y, x, ids)
    }

    /// Subset of subjects, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            y: self.y.select(Axis(0), rows),
            x: self.x.select(Axis(0), rows),
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }
}

/// Collect every problem with `data` under `spec` instead of stopping at the first.
pub fn validate_dataset(data: &Dataset, spec: &ModelSpec) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if data.n() == 0 || data.t() == 0 {
        out.push(Violation { subject: 0, time: 0, kind: ViolationKind::Empty });
        return Err(out);
    }
    if data.p() != spec.p {
        out.push(Violation {
            subject: 0,
            time: 0,
            kind: ViolationKind::CovariateCount { expected: spec.p, got: data.p() },
        });
    }
    let fam = spec.family;
    let (lo, hi) = if fam.is_binary() { (0.0, 1.0) } else { (1.0, fam.categories() as f64) };
    for ((i, t), &y) in data.y.indexed_iter() {
        let at = |kind| Violation { subject: i + 1, time: t + 1, kind };
        if !y.is_finite() {
            out.push(at(ViolationKind::NonFiniteResponse));
        } else if !fam.is_continuous() && (y.fract() != 0.0 || y < lo || y > hi) {
            out.push(at(ViolationKind::ResponseOutOfRange { value: y }));
        }
        for (j, v) in data.covariates(i, t).iter().enumerate() {
            if !v.is_finite() {
                out.push(at(ViolationKind::NonFiniteCovariate { covariate: j + 1 }));
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// [`validate_dataset`] as a `Result` with the crate error type.
pub fn ensure_valid(data: &Dataset, spec: &ModelSpec) -> Result<()> {
    validate_dataset(data, spec).map_err(MlarError::InvalidData)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        ModelSpec::new(ResponseFamily::OrdinalLogit { categories: 5 }, 1, 1, 21).unwrap()
    }

    fn panel() -> Dataset {
        let y = Array2::from_shape_fn((4, 3), |(i, t)| ((i + t) % 5 + 1) as f64);
        let x = Array3::from_shape_fn((4, 3, 1), |(i, t, _)| i as f64 - t as f64);
        Dataset::new(y, x).unwrap()
    }

    #[test]
    fn valid_panel_passes() {
        assert!(validate_dataset(&panel(), &spec()).is_ok());
    }

    #[test]
    fn out_of_range_category_names_cell() {
        let mut d = panel();
        d.y[[2, 1]] = 6.0;
        let errs = validate_dataset(&d, &spec()).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!((errs[0].subject, errs[0].time), (3, 2));
        assert!(matches!(errs[0].kind, ViolationKind::ResponseOutOfRange { .. }));
    }

    #[test]
    fn nan_covariate_reported_with_all_others() {
        let mut d = panel();
        d.x[[0, 0, 0]] = f64::NAN;
        d.y[[3, 2]] = 0.0;
        d.y[[1, 1]] = 2.5;
        let errs = validate_dataset(&d, &spec()).unwrap_err();
        assert_eq!(errs.len(), 3);
        assert!(errs
            .iter()
            .any(|v| v.kind == ViolationKind::NonFiniteCovariate { covariate: 1 } && v.subject == 1));
    }

    #[test]
    fn binary_range_is_zero_one() {
        let spec = ModelSpec::new(ResponseFamily::BinaryLogit, 1, 1, 21).unwrap();
        let mut d = panel();
        d.y.mapv_inplace(|v| (v as usize % 2) as f64);
        assert!(validate_dataset(&d, &spec).is_ok());
        d.y[[0, 0]] = 2.0;
        assert!(validate_dataset(&d, &spec).is_err());
    }

    #[test]
    fn covariate_count_checked() {
        let s = ModelSpec::new(ResponseFamily::OrdinalLogit { categories: 5 }, 2, 1, 21).unwrap();
        let errs = validate_dataset(&panel(), &s).unwrap_err();
        assert!(matches!(errs[0].kind, ViolationKind::CovariateCount { expected: 2, got: 1 }));
    }

    #[test]
    fn stacking_doubles_rows() {
        let d = panel();
        let dd = d.stack(&d).unwrap();
        assert_eq!(dd.n(), 8);
        assert_eq!(dd.y.row(5), d.y.row(1));
    }
}
