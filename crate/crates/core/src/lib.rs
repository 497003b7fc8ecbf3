//! Hedonic rent modeling at desk scale.
//!
//! The pipeline computes network accessibility variables for rental
//! listings, clips and log-transforms them into a shared design matrix, fits
//! ordinary least squares and a random forest on a training split, and
//! compares the two models out of sample with residual diagnostics.
//!
//! - [`dataset`]: listing ingestion, profiles, train/test split, synthetic regions
//! - [`netaccess`]: street networks and bounded-radius accessibility aggregation
//! - [`preprocess`]: clipping, log transforms, design matrix
//! - [`ols`]: least squares with standard errors
//! - [`forest`]: random forest regression and variable importance
//! - [`diagnostics`]: metrics, residual plots, Moran's I
//! - [`cli`]: config-driven batch pipeline

pub mod cli;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod forest;
pub mod geo;
pub mod netaccess;
pub mod ols;
pub mod plot;
pub mod preprocess;
pub mod stats;

pub use error::{Error, Result};
