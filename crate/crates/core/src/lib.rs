//! Speech disentanglement for voice conversion driven by two augmentations.

pub mod error;
pub mod signal;

pub use error::{Error, Result};
pub mod augment;
pub mod data;
pub mod nets;
pub mod losses;
pub mod train;
pub mod convert;
pub mod eval;
pub mod cli;
