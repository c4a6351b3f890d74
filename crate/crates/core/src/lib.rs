pub mod approx;
pub mod envs;
pub mod error;
pub mod focus;
pub mod regularizer;
pub mod replay;
pub mod sac;
pub mod tabular;
pub mod trainer;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
