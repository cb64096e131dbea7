pub mod adapters;
pub mod alignment;
pub mod audio;
pub mod bench;
pub mod config;
pub mod encoder;
pub mod error;
pub mod frontend;
pub mod gan;
pub mod infer;
pub mod latent;
pub mod model;
pub mod nn;
pub mod prompt;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
