pub mod artifact;
pub mod cvae;
pub mod error;
pub mod eval;
pub mod generator;
pub mod latent_gmm;
pub mod nn;
pub mod pipeline;
pub mod profile_store;
pub mod service;
pub mod simdata;

pub use error::{Error, Result};
