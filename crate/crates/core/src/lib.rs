//! Core of the hype-bench human evaluation platform.
//!
//! Two protocols are scored here. The timed protocol walks each evaluator
//! through three adaptive staircases over exposure time and reports the mean
//! modal exposure. The untimed protocol reports the fraction of a balanced
//! real/fake set that evaluators misclassify. Around those sit the pieces a
//! deployment needs: pool sampling and task assignment, qualification and
//! payment, bootstrap intervals and separability tests, and a simulator of
//! evaluators used to validate all of it without human subjects.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the bottom of this file fix it to `f64`, which is what the service uses.

pub mod error;
pub mod masks;
pub mod pool;
pub mod scalar;
pub mod scoring;
pub mod simulator;
pub mod staircase;
pub mod stats;

pub use error::{HypeError, Result};
pub use scalar::Scalar;
pub use scoring::{Judgment, Label, SessionMode};
pub use staircase::{BlockResult, Millis, StaircaseConfig, StaircaseSession, StaircaseState};

pub type EvaluatorScore = scoring::EvaluatorScore<f64>;
pub type ModelScoreReport = scoring::ModelScoreReport<f64>;
pub type SessionThreshold = staircase::SessionThreshold<f64>;
pub type BootstrapResult = stats::BootstrapResult<f64>;
pub type AnovaResult = stats::AnovaResult<f64>;
pub type TukeyResult = stats::TukeyResult<f64>;
pub type TTestResult = stats::TTestResult<f64>;
pub type SpearmanResult = stats::SpearmanResult<f64>;
pub type PsychometricModel = simulator::PsychometricModel<f64>;
