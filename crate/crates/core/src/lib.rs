//! Desk-scale hybrid-architecture search engine.
//!
//! The crate covers the whole search stack: a hybrid integer/binary genotype
//! space, NSGA-II selection, a weight-sharing supernet trained progressively
//! with dual-domain distillation, and a pooled master/worker evaluator that
//! measures latency on exclusively leased devices.

pub mod analysis;
pub mod config;
pub mod distill;
pub mod evalengine;
pub mod error;
pub mod moea;
pub mod pipeline;
pub mod search_space;
pub mod supernet;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
