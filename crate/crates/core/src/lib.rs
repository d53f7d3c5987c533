//! Regression-based principal component analysis for sparse longitudinal
//! curves, and percentile screening of whole curves with nested bivariate
//! quantile contours of their component scores.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod contour;
pub mod covariate;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod model_io;
pub mod par;
pub mod plot;
pub mod quantreg;
pub mod rpca;
pub mod simharness;

pub use basis::{build_basis, BasisSystem, Domain, InnerProduct};
pub use dataset::{center, fit_mean, read_csv, write_csv, MeanModel, SparseDataset, Subject};
pub use error::{Error, ErrorClass, Result};
pub use rpca::{fit, project_scores, ComponentModel, FitConfig};
