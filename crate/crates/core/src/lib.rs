pub mod appraisal;
pub mod baselines;
pub mod diffmath;
pub mod envs;
pub mod error;
pub mod eval;
pub mod fmt;
pub mod harness;
pub mod policy;

pub use error::{DpiError, Result};
