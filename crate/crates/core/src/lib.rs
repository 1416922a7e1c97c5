//! Unknown-intent detection with energy scores, and the GOT data
//! manipulation pipeline: locate intent-related words, generate OOD
//! utterances by single-word replacement, weight them by influence, and use
//! them to widen the energy gap between known and unknown intents.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what the pipeline and CLI use.

pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod dual;
pub mod energy;
pub mod error;
pub mod generate;
pub mod influence;
pub mod lm;
pub mod locate;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod weight;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Classifier = classifier::Classifier<f64>;
pub type ClassifierF32 = classifier::Classifier<f32>;
pub type Logits = energy::Logits<f64>;
pub type EnergyScore = energy::EnergyScore<f64>;
