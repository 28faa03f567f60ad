//! Object-aware mixing of historical tracking samples in embedding space.

pub mod container;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod mix;
pub mod mixnet;
pub mod opt;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Dims, Scalar, Tensor4, Tensor4d, Tensor4f};
