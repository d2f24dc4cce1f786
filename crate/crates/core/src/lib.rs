//! Allocation of self-owned, spot and on-demand cloud instances to
//! deadline-constrained parallel jobs.
//!
//! - [`model`]: jobs, prices, the self-owned pool and per-job run state.
//! - [`policy`]: allocation rules evaluated at arrivals and hourly updates.
//! - [`workload`]: synthetic job and price generators and trace files.
//! - [`engine`]: the slot-level simulator and cost ledger.
//! - [`learning`]: online selection of the best policy from a grid.

pub mod engine;
pub mod learning;
pub mod model;
pub mod policy;
pub mod workload;

pub use engine::{
    run, Choice, CostLedger, EngineConfig, EngineError, FixedPolicy, Metrics, PolicyChooser,
};
pub use learning::{LearnerConfig, OptiLearner, RegretReport};
pub use model::{Job, JobRun, Money, PolicyParams, Rational, Slot, SpotPriceTrace};
pub use policy::{Policy, SelfOwnedRule, SplitDecision, SplitRule};
