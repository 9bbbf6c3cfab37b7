pub mod analysis;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod model;
pub mod predict;
pub mod prox;
pub mod solver;
pub mod synth;
pub mod tuning;

pub use error::{Error, Result};
