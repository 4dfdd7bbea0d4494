//! Confidence intervals for the mean of a finite population sampled without replacement.

pub mod baselines;
pub mod ci_as;
pub mod ci_banach;
pub mod ci_finite;
pub mod dualsolve;
pub mod error;
pub mod population;
pub mod ratefn;
pub mod roots;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
