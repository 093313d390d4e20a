//! Detect simulation-model deficiency with Kolmogorov–Smirnov based tests and
//! look for its causes by fitting k-cluster mixture extensions of the model.
//!
//! The crate is organized by task:
//!
//! - [`model`]: datasets, bounded parameter spaces with priors, and the
//!   [`ForwardModel`](model::ForwardModel) trait.
//! - [`deficiency`]: KS statistics on squared normalized residuals, the
//!   deviation `d` and discrepancy measures.
//! - [`optimize`]: Nelder–Mead on the unit cube.
//! - [`mixture`]: mixture posteriors, responsibilities, EM and
//!   classification EM.
//! - [`illustrative`]: analytic truth with affine/quadratic models.
//! - [`thermal`]: 2D transient heat conduction in a box-girder cross-section,
//!   synthetic weather and sensor data.
//! - [`diagnostics`]: daily averaging and lagged correlations of cluster
//!   assignments against covariates.
//! - [`experiment`]: JSON-configured pipelines writing CSV reports; backs
//!   the `mixdisc` binary.
//!
//! The runnable programs under `examples/` walk through each capability.

pub mod deficiency;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod illustrative;
pub mod mixture;
pub mod model;
pub mod optimize;
pub mod thermal;

pub use error::{Error, Result};
