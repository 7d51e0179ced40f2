pub mod agents;
pub mod checkpoint;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod experience;
pub mod model;
pub mod nn;
pub mod seed;

pub use error::{Error, Result};
