//! Adaptive-truncation sequential Monte Carlo for Bayesian nonparametric
//! mixture models.

pub mod adaptive_mh;
pub mod ccv;
pub mod datasets;
pub mod diagnostics;
pub mod dpm;
pub mod error;
pub mod lmm;
pub mod nrmii;
pub mod numeric;
pub mod random_measures;
pub mod smc;
pub mod ts;

pub use error::{Error, Result};
pub use smc::{SmcConfig, SmcModel, SmcOutput};
