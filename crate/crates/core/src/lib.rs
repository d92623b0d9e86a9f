//! Video Swin Transformer action recognition with optional language-assisted
//! training, built on a small self-contained autodiff engine.

pub mod classes;
pub mod data;
pub mod error;
#[cfg(feature = "language")]
pub mod lang;
pub mod rng;
pub mod swin;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
