//! Conditional multi-agent trajectory forecasting for highway scenes.
//!
//! Given observed histories around an ego agent and a candidate future plan
//! for that ego, the model predicts a maneuver-weighted bivariate Gaussian
//! trajectory for every target agent near the ego.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod graphs;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scene;
pub mod train;
pub mod whatif;

pub use error::{Error, Result};
