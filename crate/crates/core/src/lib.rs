//! Differentially private SGD at micro-batch size 1 with
//! gradient accumulation, RDP accounting, and an experiment harness.

pub mod accountant;
pub mod config;
pub mod data;
pub mod dp_engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod tensor;

pub use error::{Error, Result};
