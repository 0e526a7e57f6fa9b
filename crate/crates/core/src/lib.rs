pub mod baselines;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod instance;
pub mod io;
pub mod linalg;
pub mod moments;
pub mod network;
pub mod solver;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
