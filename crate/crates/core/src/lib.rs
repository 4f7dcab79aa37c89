//! Explainable joint intent detection and slot filling: corpus handling,
//! model, training, metrics and explanation export.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod entropy;
pub mod error;
pub mod explain;
pub mod intent;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod slot;
pub mod trainer;

pub use error::{Error, Result};
