pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod meta;
pub mod model;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
