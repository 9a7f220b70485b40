//! Message-passing graph neural networks on latent-position random graphs.

pub mod error;
pub mod experiment;
pub mod graph;
pub mod bounds;
pub mod continuum;
pub mod message_passing;
pub mod numeric;
pub mod rng;

pub use error::{Error, Result};
