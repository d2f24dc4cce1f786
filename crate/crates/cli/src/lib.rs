//! Batch runner for `spotalloc`: policy sweeps, self-owned sweeps with a
//! pinned `β*`, and online learning over the policy grid.
//!
//! - [`config`]: TOML schema and the built-in `paper-v-a` preset.
//! - [`experiment`]: paired runs pooled over seeds.
//! - [`emit`]: CSV tables and the reproducible manifest.

pub mod config;
pub mod emit;
pub mod experiment;

pub use config::{ExperimentConfig, Mode};
pub use experiment::{execute, Report};
