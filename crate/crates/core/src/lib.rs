//! Multi-task recommendation models with cross-task feature mining (CTFM)
//! and global knowledge distillation (GKD) heads, plus the data pipeline,
//! metrics and experiment harness around them.

pub mod backbones;
pub mod data;
pub mod dml;
mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;

pub use error::{Error, Result};
