//! Causal interaction models: local structure where independent noisy
//! mechanisms, each driven by a subset of the causes, combine
//! deterministically into the effect.
//!
//! The crate covers the full learning loop for these models:
//!
//! - [`model`]: domain types (structures, parameters, clamps, datasets) and
//!   structural validation.
//! - [`inference`]: exact effect distributions and mechanism posteriors for
//!   max-combination and Poisson sum-combination models, plus a generic
//!   enumeration oracle that also serves NOf/parity combinations.
//! - [`em`]: EM for ML and MAP estimates with hidden mechanism variables,
//!   with independent seeded restarts.
//! - [`scoring`]: complete-data marginal likelihood, BIC, raw and adjusted
//!   Cheeseman-Stutz scores, and normalized model posteriors.
//! - [`dimension`]: model dimension as the generic rank of the Jacobian of
//!   the parameter-to-observable map, by central differences and SVD.
//! - [`catalog`]: the five-model simulation catalog, seeded reference
//!   parameters, and prefix-stable forward sampling.
//! - [`study`]: the end-to-end simulation grid with per-cell determinism.
//! - [`io`]: the JSON model format, dataset CSV, and report writers.
//!
//! Compiled with the `parallel` feature (default), restarts, study cells,
//! rank points, and E-step batches run on rayon; without it everything runs
//! sequentially. Outputs are identical either way for a fixed seed.

pub mod catalog;
pub mod dimension;
pub mod em;
pub mod error;
pub mod inference;
pub mod io;
pub mod model;
pub mod scoring;
pub mod study;

mod exec;

pub use error::{Error, Result};
