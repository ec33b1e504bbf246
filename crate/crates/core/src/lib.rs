//! Decide / describe / retrieve pipeline for image sharing in dialogue,
//! with the evaluation metrics and the dataset augmenter built on it.

pub mod augment;
pub mod data;
pub mod echo;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod text;
