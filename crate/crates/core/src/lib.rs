//! Extreme value analysis: distribution kernels, estimation, goodness-of-fit
//! tests for the r largest order statistics and for threshold exceedances,
//! ordered stopping rules for automatic selection, return-level inference
//! and simulation schemes.

pub mod dist;
pub mod error;
pub mod estimation;
pub mod gof_gevr;
pub mod gof_gpd;
pub mod inference;
mod linalg;
pub mod lmoments;
pub mod optim;
pub mod rng;
pub mod sequential;
pub mod simkit;

pub use dist::{GevParams, GpdParams, KumGevParams, TopROrderSample};
pub use error::{Error, Result};
pub use estimation::{CoefficientSet, FitResult, LinkedModelSpec};
pub use gof_gevr::{TestMethod, TestOutcome};
pub use gof_gpd::NullTable;
