//! Model specification: response family, sizes and quadrature settings.

use serde::{Deserialize, Serialize};

use crate::error::{MlarError, Result};

/// Default half-width of the knot grid on the standardized latent scale.
pub const DEFAULT_KNOT_BOUND: f64 = 5.0;
/// Default (and starting) number of quadrature points.
pub const DEFAULT_Q: usize = 21;

/// Error law of the underlying continuous response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Probit,
}

/// How the observed response relates to the latent continuous outcome.
///
/// Binary responses are coded 0/1, ordinal responses 1..=J, continuous
/// responses are arbitrary reals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResponseFamily {
    Continuous,
    BinaryLogit,
    BinaryProbit,
    OrdinalLogit { categories: usize },
    OrdinalProbit { categories: usize },
}

impl ResponseFamily {
    /// Parse a family name as used on the command line.
    pub fn from_name(name: &str, categories: Option<usize>) -> Result<Self> {
        let need_j = || {
            categories.ok_or_else(|| {
                MlarError::InvalidSpec(format!("family '{name}' needs a category count"))
            })
        };
        let fam = match name {
            "continuous" => ResponseFamily::Continuous,
            "binary-logit" => ResponseFamily::BinaryLogit,
            "binary-probit" => ResponseFamily::BinaryProbit,
            "ordinal-logit" => ResponseFamily::OrdinalLogit { categories: need_j()? },
            "ordinal-probit" => ResponseFamily::OrdinalProbit { categories: need_j()? },
            other => {
                return Err(MlarError::InvalidSpec(format!("unknown family '{other}'")));
            }
        };
        fam.validate()?;
        Ok(fam)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ResponseFamily::Continuous => "continuous",
            ResponseFamily::BinaryLogit => "binary-logit",
            ResponseFamily::BinaryProbit => "binary-probit",
            ResponseFamily::OrdinalLogit { .. } => "ordinal-logit",
            ResponseFamily::OrdinalProbit { .. } => "ordinal-probit",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ResponseFamily::OrdinalLogit { categories } | ResponseFamily::OrdinalProbit { categories }
                if categories < 3 =>
            {
                Err(MlarError::InvalidSpec(format!(
                    "ordinal families need at least 3 categories (got {categories}); use a binary family for 2"
                )))
            }
            _ => Ok(()),
        }
    }

    /// `None` for the continuous family.
    pub fn link(&self) -> Option<Link> {
        match self {
            ResponseFamily::Continuous => None,
            ResponseFamily::BinaryLogit | ResponseFamily::OrdinalLogit { .. } => Some(Link::Logit),
            ResponseFamily::BinaryProbit | ResponseFamily::OrdinalProbit { .. } => Some(Link::Probit),
        }
    }

    /// Number of response categories J (2 for binary, 0 for continuous).
    pub fn categories(&self) -> usize {
        match *self {
            ResponseFamily::Continuous => 0,
            ResponseFamily::BinaryLogit | ResponseFamily::BinaryProbit => 2,
            ResponseFamily::OrdinalLogit { categories } | ResponseFamily::OrdinalProbit { categories } => {
                categories
            }
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, ResponseFamily::Continuous)
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, ResponseFamily::BinaryLogit | ResponseFamily::BinaryProbit)
    }

    /// Length of the intercept vector: J-1 cutpoints, or one intercept.
    pub fn n_cut(&self) -> usize {
        match self {
            ResponseFamily::Continuous => 1,
            _ => self.categories() - 1,
        }
    }

    /// Parameters that only live on the response scale (intercepts plus the
    /// measurement-error variance of the continuous family).
    pub fn n_response_scale(&self) -> usize {
        self.n_cut() + usize::from(self.is_continuous())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ResponseFamily,
    /// Number of covariates.
    pub p: usize,
    /// Number of mixture components.
    pub k: usize,
    /// Number of quadrature points.
    pub q: usize,
    pub knot_bound: f64,
}

impl ModelSpec {
    pub fn new(family: ResponseFamily, p: usize, k: usize, q: usize) -> Result<Self> {
        let spec = ModelSpec { family, p, k, q, knot_bound: DEFAULT_KNOT_BOUND };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_bound(mut self, bound: f64) -> Result<Self> {
        self.knot_bound = bound;
        self.validate()?;
        Ok(self)
    }

    pub fn with_q(mut self, q: usize) -> Self {
        self.q = q;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.k < 1 {
            return Err(MlarError::InvalidSpec("k must be at least 1".into()));
        }
        if self.q < 3 {
            return Err(MlarError::InvalidSpec(format!("q must be at least 3 (got {})", self.q)));
        }
        if !(self.knot_bound > 0.0 && self.knot_bound.is_finite()) {
            return Err(MlarError::InvalidSpec(format!(
                "knot bound must be positive (got {})",
                self.knot_bound
            )));
        }
        Ok(())
    }

    /// Number of free parameters in the packed vector.
    pub fn n_params(&self) -> usize {
        count_parameters(self)
    }
}

/// Free parameter count: response-scale terms, slopes, the latent scale and
/// `3k - 2` latent-structure terms (k-1 support points, k correlations,
/// k-1 mass probabilities).
pub fn count_parameters(spec: &ModelSpec) -> usize {
    spec.family.n_response_scale() + spec.p + 1 + (3 * spec.k - 2)
}
