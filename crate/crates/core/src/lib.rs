pub mod attack;
pub mod autodiff;
pub mod bayesopt;
pub mod cli;
pub mod error;
pub mod fedsim;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
