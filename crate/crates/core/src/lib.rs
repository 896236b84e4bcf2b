pub mod accpm;
pub mod bounds;
pub mod error;
pub mod falsifier;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod sets;
pub mod systems;
pub mod training;
pub mod verifier;

pub use error::{Error, Result};
