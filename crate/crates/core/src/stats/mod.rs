//! The statistical procedures behind score reports: bootstrap intervals,
//! separability tests between models, rank correlation against automated
//! metrics, and the binomial tail behind the qualification threshold.

mod anova;
mod binomial;
mod bootstrap;
mod spearman;
pub mod special;
mod ttest;

pub use anova::{one_way_anova, tukey_hsd, AnovaResult, TukeyPair, TukeyResult};
pub use binomial::{binomial_tail, BinomialTail};
pub use bootstrap::{bootstrap_ci, percentile, BootstrapResult, DEFAULT_ITERATIONS, DEFAULT_RESAMPLE_SIZE};
pub use spearman::{average_ranks, spearman, SpearmanResult};
pub use ttest::{t_test_unpaired, TTestResult};
