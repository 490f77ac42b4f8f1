//! Layer pruning and two-phase siamese fine-tuning of small BERT-style
//! sentence encoders, with similarity and KNN evaluation.

pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod pruning;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
