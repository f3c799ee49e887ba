//! Orchestration service for hype-bench evaluations.
//!
//! Runs are created against an image pool, evaluators open sessions and
//! answer stimuli over HTTP, and every answer is appended to a per-run log.
//! Scores and comparisons are pure folds over those logs, so a run can be
//! rescored offline from its files alone.

pub mod api;
pub mod config;
pub mod error;
pub mod log;
pub mod metrics;
pub mod report;
pub mod store;

pub use config::Config;
pub use error::{Result, ServiceError};
pub use store::Store;
