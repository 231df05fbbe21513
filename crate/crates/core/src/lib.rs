//! Jackknife model averaging for composite quantile regression.

// dense linear algebra reads best with explicit indices
#![allow(clippy::needless_range_loop)]

pub mod averaging;
pub mod cqr;
pub mod data;
pub mod error;
pub mod io;
pub mod loss;
pub mod lp;
pub mod methods;
pub mod models;
pub mod sim;
pub mod weighting;
pub mod workflows;

pub use cqr::{fit_cqr, fit_qr, CqrFit};
pub use data::Dataset;
pub use error::{Error, Result};
pub use loss::QuantileGrid;
