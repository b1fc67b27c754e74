//! Mixture latent autoregressive (MLAR) models for longitudinal data.
//!
//! The latent individual effect of every subject follows one of `k`
//! stationary AR(1) processes sharing a common variance. Responses
//! (continuous, binary or ordinal) depend on the latent effect and on
//! covariates; the latent process is integrated out on a fixed knot grid,
//! which turns each mixture component into a hidden Markov chain on the
//! knots.
//!
//! Main entry points:
//!
//! * [`likelihood::total_loglik`] evaluates the quadrature log-likelihood;
//! * [`em::em_fit`] and [`newton::nr_fit`] maximize it, and [`fit::fit_model`]
//!   chains start values, EM, Newton-Raphson and standard errors;
//! * [`predict::predict_alpha`] gives posterior means of the latent effects;
//! * [`select::select_q`] and [`select::select_k`] choose the grid size and
//!   the number of components.

pub mod data;
pub mod density;
pub mod em;
pub mod error;
pub mod fit;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod newton;
pub mod optim;
pub mod par;
pub mod params;
pub mod predict;
pub mod quadrature;
pub mod response;
pub mod select;
pub mod simulate;
pub mod summary;

mod objective;

pub use data::{validate_dataset, Dataset, Violation, ViolationKind};
pub use error::{MlarError, Result};
pub use fit::{fit_model, FitOptions, FitResult, StartStrategy};
pub use model::{count_parameters, Link, ModelSpec, ResponseFamily, DEFAULT_KNOT_BOUND, DEFAULT_Q};
pub use params::{ParamLayout, Parameters};
pub use quadrature::QuadratureGrid;
pub use predict::{predict_alpha, PredictionSurface};
pub use simulate::{simulate_dataset, SimControl};
