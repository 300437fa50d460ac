//! Restore process samplers: local dynamics with state-dependent regeneration.

pub mod analysis;
pub mod clocks;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod model;
pub mod oracle;
pub mod sampler;
pub mod streams;

pub use error::{RestoreError, Result};
