//! Joint object pose estimation and categorization from layered part
//! realizations.
//!
//! The pipeline runs in four stages:
//!
//! - [`types`]: part realizations, image records and datasets;
//! - [`features`]: per-layer orientation histograms, part-HOG and graph
//!   entropy, assembled into a layer-blocked design matrix;
//! - [`solver`]: sharing-form ADMM for group-lasso pose regression and
//!   l1 logistic categorization;
//! - [`eval`]: metrics, grid search and the experiment protocols.
//!
//! [`synth`] generates deterministic turntable datasets and [`io`] holds
//! the file formats and a simple layer-1 edge detector.

pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod linalg;
pub mod solver;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
