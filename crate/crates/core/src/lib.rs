pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod expr;
pub mod model;
pub mod par;
pub mod problem;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
