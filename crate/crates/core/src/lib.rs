//! Plan-MAE: masked-autoencoder pretraining and imitation finetuning of an
//! integrated prediction-and-planning transformer over vectorized driving
//! scenes, with a synthetic scenario generator, metric suite, and ablation
//! harness.

pub mod error;
pub mod gen;
pub mod model;
pub mod nn;
pub mod scene;

pub use error::{Error, Result};
pub use scene::{Scene, SceneDims};
