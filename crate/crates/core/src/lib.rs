//! Interactive grayscale colorization with lasso-localized cross-attention.
//!
//! User color points become hint tokens that image tokens attend to; each
//! point's lasso gates that attention so its color only spreads inside the
//! lasso. See the README for the CLI, service and file formats.

pub mod autograd;
pub mod checkpoint;
pub mod colorspace;
pub mod datasets;
pub mod error;
pub mod gradcheck;
pub mod imageio;
pub mod interaction;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod service;
pub mod tensor;
pub mod training;

pub use error::{CheckpointError, Error, Result};
