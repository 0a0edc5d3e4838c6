pub mod annotations;
pub mod dataset;
pub mod autograd;
pub mod density;
pub mod error;
pub mod image;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod training;

pub use error::{Error, ErrorKind, Result};
