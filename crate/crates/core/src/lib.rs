//! Bayesian computerized adaptive testing (CAT) under the Rasch model.
//!
//! The crate is organised bottom-up:
//!
//! - [`irt`]: response probabilities, likelihood, Fisher information and the
//!   bounded maximum-likelihood ability estimator.
//! - [`posterior`]: priors on a bounded ability interval and grid-quadrature
//!   posterior inference (mean, median, mode, variance, interval mass,
//!   expected loss).
//! - [`selection`]: item banks and the item-selection rules (maximum
//!   information, posterior-weighted information, minimum expected posterior
//!   variance and one-step Bayes risk).
//! - [`session`]: the adaptive-test state machine with replayable event logs.
//! - [`simulate`]: the seeded Monte Carlo harness producing MSE tables.
//! - [`theory`]: numerical checks of the concentration-rate bounds and
//!   empirical concentration/consistency experiments.
//! - [`api`]: JSON shapes used by the HTTP service and its client.

// Negated comparisons are used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod config;
pub mod error;
pub mod irt;
pub mod posterior;
pub mod selection;
pub mod session;
pub mod simulate;
pub mod stats;
pub mod theory;

pub use error::{CatError, Result};
pub use irt::{Response, ResponseRecord, ThetaBounds};
pub use posterior::{AbilityGrid, LossSpec, Posterior, PriorKind, PriorSpec};
pub use selection::{Choice, Item, ItemBank, SelectionRule};
pub use session::{Estimate, EstimatorKind, Phase, SessionConfig, SessionLog, SessionState};
