pub mod augment;
pub mod clfm;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod icd;
pub mod losses;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
