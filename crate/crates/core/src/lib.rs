//! Bayesian optimal fingerprinting for climate detection and attribution.
//!
//! The pipeline regresses an observed trend field onto a model-estimated
//! forced pattern, `y ~ beta * x + eps`, with the natural-variability
//! covariance of `eps` parameterized in an orthonormal basis: either the
//! eigenfunctions of the discretized spherical Laplace operator or the
//! principal components of a control-run ensemble. The truncation number
//! (how many basis components carry the covariance) is itself modeled with
//! a chi-squared residual-consistency likelihood, and the regression and
//! truncation models are fit jointly by an alternating two-fit procedure.
//!
//! Crate layout:
//!
//! - [`grid`]: regular lat-lon spherical grids and great-circle geometry
//! - [`basis`]: orthonormal basis sets and field projection
//! - [`laplacian`]: the discretized spherical Laplacian and its eigenbasis
//! - [`covariance`]: control ensembles, empirical covariances, variance spectra
//! - [`gls`]: closed-form generalized least squares and the residual statistic
//! - [`bayes`]: the hierarchical regression model, MCMC sampler, truncation
//!   likelihoods, and the two-fit procedure
//! - [`trends`]: gridded time series to 25-year trend fields
//! - [`metrics`]: coverage, RMSE, CRPS, detection/attribution statistics
//! - [`synth`]: seeded synthetic-world generation for known-truth studies
//! - [`validation`]: the leave-one-out validation protocol
//!
//! The crate is `no_std` (with `alloc`); IO, file formats, and the CLI live
//! in the companion `fingerprint-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod basis;
pub mod bayes;
pub mod covariance;
pub mod error;
pub mod gls;
pub mod grid;
pub mod laplacian;
pub mod metrics;
pub mod synth;
pub mod trends;
pub mod validation;

pub use basis::{BasisKind, BasisSet};
pub use covariance::{ControlEnsemble, FieldVector, VarianceSpectrum};
pub use error::Error;
pub use grid::Grid;
