//! Dataset preparation, training, inference and evaluation for point-patch
//! GPT streamline classification.

pub mod commands;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod experiment;
pub mod infer;
pub mod training;
