pub mod circle;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod fixtures;
pub mod integrators;
pub mod invariants;
pub mod phase;
pub mod quadratic;
pub mod scalar;
