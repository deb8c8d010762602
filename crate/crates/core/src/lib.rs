pub mod data;
pub mod engine;
pub mod fairness;
pub mod models;
pub mod seed;
pub mod trainer;

#[cfg(feature = "cli")]
pub mod cli;
