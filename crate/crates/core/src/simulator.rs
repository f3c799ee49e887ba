//! Simulated evaluators for both protocols.
//!
//! Every simulated evaluator gets its own RNG stream derived from the
//! experiment seed and its index, so results do not depend on scheduling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};
use crate::pool::derive_seed;
use crate::scalar::Scalar;
use crate::scoring::{evaluator_error_rates, hype_infinity, EvaluatorScore, Judgment, Label};
use crate::staircase::{next_exposure, Millis, SessionThreshold, StaircaseConfig, StaircaseSession};
use crate::stats::bootstrap_ci;

/// Logistic psychometric function in log exposure:
/// `p(e) = guess + (1 - guess - lapse) * logistic(slope * (ln e - ln midpoint))`,
/// with the midpoint placed so that `p(threshold_t75) = 0.75`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsychometricModel<T = f64> {
    pub guess_rate: T,
    pub lapse_rate: T,
    pub threshold_t75: T,
    pub slope: T,
}

impl<T: Scalar> PsychometricModel<T> {
    pub fn new(threshold_t75: T, slope: T) -> Self {
        Self { guess_rate: T::lit(0.5), lapse_rate: T::lit(0.02), threshold_t75, slope }
    }

    pub fn with_lapse(mut self, lapse_rate: T) -> Self {
        self.lapse_rate = lapse_rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lapse_rate >= T::zero()
            && self.lapse_rate <= T::lit(0.5)
            && self.guess_rate >= T::zero()
            && self.guess_rate + self.lapse_rate <= T::one()
            && self.threshold_t75 > T::zero()
            && self.slope > T::zero();
        if ok {
            Ok(())
        } else {
            Err(HypeError::Config(format!("invalid psychometric model {self:?}")))
        }
    }

    /// Log of the logistic midpoint. When the lapse rate keeps the curve from
    /// ever reaching 0.75, the midpoint falls back to `threshold_t75`.
    fn log_midpoint(&self) -> T {
        let span = T::one() - self.guess_rate - self.lapse_rate;
        let a = (T::lit(0.75) - self.guess_rate) / span;
        if span <= T::zero() || a <= T::zero() || a >= T::one() {
            return self.threshold_t75.ln();
        }
        self.threshold_t75.ln() - (a / (T::one() - a)).ln() / self.slope
    }

    pub fn p_correct(&self, exposure_ms: T) -> T {
        if exposure_ms <= T::zero() {
            return self.guess_rate;
        }
        let x = self.slope * (exposure_ms.ln() - self.log_midpoint());
        let logistic = T::one() / (T::one() + (-x).exp());
        self.guess_rate + (T::one() - self.guess_rate - self.lapse_rate) * logistic
    }
}

/// Runs one full timed session (all blocks) against a simulated evaluator.
pub fn simulate_time_session<T: Scalar>(
    model: &PsychometricModel<T>,
    config: &StaircaseConfig,
    evaluator_id: &str,
    seed: u64,
) -> Result<SessionThreshold<T>> {
    model.validate()?;
    let mut session = StaircaseSession::new(*config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while let Some(exposure) = session.current_exposure() {
        let p = model.p_correct(T::lit(f64::from(exposure))).as_f64();
        session.record(rng.random_bool(p.clamp(0.0, 1.0)))?;
    }
    session.threshold(evaluator_id)
}

/// Per-class mistake probabilities of a simulated untimed evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfinityBehaviorModel {
    /// Probability of answering "real" to a generated image.
    pub p_fooled_by_fake: f64,
    /// Probability of answering "fake" to a real image.
    pub p_misjudge_real: f64,
}

impl InfinityBehaviorModel {
    pub fn validate(&self) -> Result<()> {
        for p in [self.p_fooled_by_fake, self.p_misjudge_real] {
            if !(0.0..=1.0).contains(&p) {
                return Err(HypeError::Config(format!("{p} is not a probability")));
            }
        }
        Ok(())
    }

    /// Expected untimed score in percent.
    pub fn expected_score(&self) -> f64 {
        (self.p_fooled_by_fake + self.p_misjudge_real) / 2.0 * 100.0
    }
}

/// `n_real` real and `n_fake` generated stimuli, judged independently.
pub fn simulate_infinity_session(
    model: &InfinityBehaviorModel,
    n_real: usize,
    n_fake: usize,
    evaluator_id: &str,
    seed: u64,
) -> Result<Vec<Judgment>> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_real + n_fake);
    for i in 0..n_fake {
        let answer = if rng.random_bool(model.p_fooled_by_fake) { Label::Real } else { Label::Fake };
        out.push(Judgment::new(evaluator_id, &format!("fake-{i}"), Label::Fake, answer));
    }
    for i in 0..n_real {
        let answer = if rng.random_bool(model.p_misjudge_real) { Label::Fake } else { Label::Real };
        out.push(Judgment::new(evaluator_id, &format!("real-{i}"), Label::Real, answer));
    }
    Ok(out)
}

/// Per-evaluator scores for a simulated untimed cohort of `n` evaluators.
pub fn simulate_infinity_cohort(
    model: &InfinityBehaviorModel,
    n: usize,
    seed: u64,
) -> Result<Vec<EvaluatorScore<f64>>> {
    (0..n)
        .map(|i| {
            let id = format!("sim-{i:04}");
            let js = simulate_infinity_session(model, 50, 50, &id, derive_seed(seed, &["infinity", &id]))?;
            evaluator_error_rates(&js)
        })
        .collect()
}

/// Session thresholds for a simulated timed cohort.
pub fn simulate_time_cohort<T: Scalar>(
    model: &PsychometricModel<T>,
    config: &StaircaseConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<SessionThreshold<T>>> {
    (0..n)
        .map(|i| {
            let id = format!("sim-{i:04}");
            simulate_time_session(model, config, &id, derive_seed(seed, &["time", &id]))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub width: f64,
}

/// Outcome of a simulation experiment, reproducible from `config` and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: serde_json::Value,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_evaluator: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<CurvePoint>,
    pub summary: BTreeMap<String, f64>,
}

impl ExperimentReport {
    pub fn summary_value(&self, key: &str) -> Option<f64> {
        self.summary.get(key).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffConfig {
    pub n_grid: Vec<usize>,
    pub iterations: usize,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        Self { n_grid: (1..=12).map(|i| i * 10).collect(), iterations: 10_000 }
    }
}

/// Bootstrap interval width as a function of the number of evaluators
/// resampled from a fixed pool of per-evaluator scores.
pub fn run_cost_tradeoff_experiment(
    pool_scores: &[f64],
    config: &TradeoffConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    if pool_scores.is_empty() {
        return Err(HypeError::Input("empty evaluator pool".into()));
    }
    if let Some(&n) = config.n_grid.iter().find(|&&n| n == 0 || n > pool_scores.len()) {
        return Err(HypeError::Input(format!("grid size {n} outside 1..={}", pool_scores.len())));
    }
    let mut curve = Vec::with_capacity(config.n_grid.len());
    for &n in &config.n_grid {
        let b = bootstrap_ci(pool_scores, n, config.iterations, derive_seed(seed, &["tradeoff", &n.to_string()]))?;
        curve.push(CurvePoint { n, mean: b.mean, std: b.std, ci_low: b.ci_low, ci_high: b.ci_high, width: b.width() });
    }
    let mut summary = BTreeMap::new();
    let at = |n: usize| curve.iter().find(|p| p.n == n);
    for (a, b) in [(10, 40), (10, 30), (30, 120)] {
        if let (Some(pa), Some(pb)) = (at(a), at(b)) {
            if pb.width > 0.0 {
                summary.insert(format!("width_ratio_{a}_{b}"), pa.width / pb.width);
            }
            if pb.std > 0.0 {
                summary.insert(format!("std_ratio_{a}_{b}"), pa.std / pb.std);
            }
        }
    }
    Ok(ExperimentReport {
        experiment: "tradeoff".into(),
        config: serde_json::to_value(config).unwrap_or_default(),
        seed,
        per_evaluator: pool_scores.to_vec(),
        curve,
        summary,
    })
}

/// Simulated pool of untimed evaluators feeding the tradeoff experiment; scores in percent.
pub fn infinity_pool_scores(model: &InfinityBehaviorModel, n: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(simulate_infinity_cohort(model, n, seed)?.iter().map(|e| e.combined_error * 100.0).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub step_down: Millis,
    pub step_up: Millis,
    pub responder_p: f64,
    pub blocks: usize,
    pub trials_per_block: usize,
    pub start_exposure: Millis,
    pub min_exposure: Millis,
    pub max_exposure: Millis,
}

impl ConvergenceConfig {
    pub fn new(step_down: Millis, step_up: Millis, responder_p: f64) -> Self {
        let d = StaircaseConfig::default();
        Self {
            step_down,
            step_up,
            responder_p,
            blocks: 10_000,
            trials_per_block: d.trials_per_block,
            start_exposure: d.start_exposure,
            min_exposure: d.min_exposure,
            max_exposure: d.max_exposure,
        }
    }
}

/// Drives the staircase with fixed-accuracy responders.
///
/// `mean_drift_per_trial` averages the exposure change over trials whose
/// starting exposure was far enough from both bounds that no clamp could
/// apply; it estimates the walk's free drift. `mean_final_offset` is the mean
/// of (final exposure - start) over blocks, bounds included.
pub fn run_convergence_experiment(config: &ConvergenceConfig, seed: u64) -> Result<ExperimentReport> {
    if config.step_down == 0 || config.step_up == 0 {
        return Err(HypeError::Config("steps must be positive".into()));
    }
    if !(config.responder_p > 0.0 && config.responder_p < 1.0) {
        return Err(HypeError::Config("responder_p must lie in (0, 1)".into()));
    }
    let staircase = StaircaseConfig {
        start_exposure: config.start_exposure,
        min_exposure: config.min_exposure,
        max_exposure: config.max_exposure,
        step_down_on_correct: config.step_down,
        step_up_on_incorrect: config.step_up,
        trials_per_block: config.trials_per_block,
        blocks_per_session: 1,
        fake_fraction: 0.5,
    };
    staircase.validate()?;
    let lo = config.min_exposure + config.step_down;
    let hi = config.max_exposure.saturating_sub(config.step_up);
    let (mut free_sum, mut free_n) = (0i64, 0u64);
    let mut final_sum = 0i64;
    let mut accuracy_sum = 0u64;
    for b in 0..config.blocks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let mut e = config.start_exposure;
        for _ in 0..config.trials_per_block {
            let correct = rng.random_bool(config.responder_p);
            accuracy_sum += u64::from(correct);
            let next = next_exposure(&staircase, e, correct);
            if (lo..=hi).contains(&e) {
                free_sum += i64::from(next) - i64::from(e);
                free_n += 1;
            }
            e = next;
        }
        final_sum += i64::from(e) - i64::from(config.start_exposure);
    }
    let p = config.responder_p;
    let expected = -p * f64::from(config.step_down) + (1.0 - p) * f64::from(config.step_up);
    let trials = (config.blocks * config.trials_per_block) as f64;
    let mut summary = BTreeMap::new();
    summary.insert("mean_drift_per_trial".into(), free_sum as f64 / free_n.max(1) as f64);
    summary.insert("expected_drift_per_trial".into(), expected);
    summary.insert("mean_final_offset".into(), final_sum as f64 / config.blocks as f64);
    summary.insert("observed_accuracy".into(), accuracy_sum as f64 / trials);
    summary.insert("free_trial_fraction".into(), free_n as f64 / trials);
    Ok(ExperimentReport {
        experiment: "convergence".into(),
        config: serde_json::to_value(config).unwrap_or_default(),
        seed,
        per_evaluator: Vec::new(),
        curve: Vec::new(),
        summary,
    })
}

/// Untimed cohort simulated and scored end to end, with a bootstrap interval.
pub fn run_infinity_experiment(
    model: &InfinityBehaviorModel,
    n_evaluators: usize,
    iterations: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let cohort = simulate_infinity_cohort(model, n_evaluators, seed)?;
    let report = hype_infinity("simulated", &cohort)?;
    let scores: Vec<f64> = cohort.iter().map(|e| e.combined_error * 100.0).collect();
    let boot = bootstrap_ci(&scores, crate::stats::DEFAULT_RESAMPLE_SIZE, iterations, seed)?;
    let mut summary = BTreeMap::new();
    summary.insert("score".into(), report.score);
    summary.insert("fake_error_mean".into(), report.fake_error_mean.unwrap_or(f64::NAN));
    summary.insert("real_error_mean".into(), report.real_error_mean.unwrap_or(f64::NAN));
    summary.insert("std".into(), boot.std);
    summary.insert("ci_low".into(), boot.ci_low);
    summary.insert("ci_high".into(), boot.ci_high);
    summary.insert("expected_score".into(), model.expected_score());
    Ok(ExperimentReport {
        experiment: "infinity".into(),
        config: serde_json::json!({ "model": model, "n_evaluators": n_evaluators, "iterations": iterations }),
        seed,
        per_evaluator: scores,
        curve: Vec::new(),
        summary,
    })
}

/// Timed cohort simulated end to end.
pub fn run_time_experiment(
    model: &PsychometricModel<f64>,
    config: &StaircaseConfig,
    n_evaluators: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let thresholds = simulate_time_cohort(model, config, n_evaluators, seed)?;
    let values: Vec<f64> = thresholds.iter().map(|t| t.threshold_ms).collect();
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    let at_floor = values.iter().filter(|&&v| v == f64::from(config.min_exposure)).count();
    let at_ceiling = values.iter().filter(|&&v| v == f64::from(config.max_exposure)).count();
    let mut summary = BTreeMap::new();
    summary.insert("mean_threshold_ms".into(), mean);
    summary.insert("floor_fraction".into(), at_floor as f64 / values.len().max(1) as f64);
    summary.insert("ceiling_fraction".into(), at_ceiling as f64 / values.len().max(1) as f64);
    summary.insert("threshold_t75".into(), model.threshold_t75);
    Ok(ExperimentReport {
        experiment: "time".into(),
        config: serde_json::json!({ "model": model, "staircase": config, "n_evaluators": n_evaluators }),
        seed,
        per_evaluator: values,
        curve: Vec::new(),
        summary,
    })
}
