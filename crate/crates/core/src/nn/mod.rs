//! Dense feed-forward substrate with manual backpropagation and Adam.

mod adam;
mod dense;
pub mod gradcheck;

pub use adam::{AdamConfig, AdamState};
pub use dense::{Activation, Backward, Dense, DenseNet, ForwardCache};
