//! Siamese identification+verification embedding network trained with
//! plain SGD, plus the pedestrian-retrieval evaluation pipeline around it.

pub mod autograd;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod losses;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{ParamStore, Tensor};
