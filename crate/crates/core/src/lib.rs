//! Penalized generalized linear mixed models fit by Monte Carlo ECM.
//!
//! Every numerical type is generic over [`Real`]; the aliases below fix the
//! scalar to `f64` or `f32`.

pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod mcecm;
pub mod model;
pub mod mstep;
pub mod real;
pub mod sampler;
pub mod selection;
pub mod simgen;

pub use error::{PglmmError, Result};
pub use model::{CovKind, CovStructure, Dataset, Family, Theta};
pub use real::Real;

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Theta64 = Theta<f64>;
pub type Theta32 = Theta<f32>;
pub type FitResult64 = mcecm::FitResult<f64>;
pub type FitResult32 = mcecm::FitResult<f32>;
pub type SelectionResult64 = selection::SelectionResult<f64>;
pub type SelectionResult32 = selection::SelectionResult<f32>;
