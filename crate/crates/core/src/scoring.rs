//! Turning raw real/fake judgments into model scores.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};
use crate::scalar::{mean, Scalar};
use crate::staircase::{Millis, SessionThreshold};
use crate::stats::BootstrapResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn flipped(self) -> Self {
        match self {
            Label::Real => Label::Fake,
            Label::Fake => Label::Real,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    Time,
    Infinity,
    Qualification,
}

impl fmt::Display for SessionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionMode::Time => "time",
            SessionMode::Infinity => "infinity",
            SessionMode::Qualification => "qualification",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub evaluator_id: String,
    pub image_id: String,
    pub truth: Label,
    pub answer: Label,
    pub correct: bool,
    /// Commanded exposure; present only for timed sessions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure_ms: Option<Millis>,
    /// Milliseconds since the Unix epoch.
    pub submitted_at: u64,
    /// Display time the client reports it actually achieved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_exposure_ms: Option<f64>,
}

impl Judgment {
    pub fn new(evaluator_id: &str, image_id: &str, truth: Label, answer: Label) -> Self {
        Self {
            evaluator_id: evaluator_id.to_string(),
            image_id: image_id.to_string(),
            truth,
            answer,
            correct: truth == answer,
            exposure_ms: None,
            submitted_at: 0,
            measured_exposure_ms: None,
        }
    }

    pub fn with_exposure(mut self, exposure_ms: Millis) -> Self {
        self.exposure_ms = Some(exposure_ms);
        self
    }

    pub fn at(mut self, submitted_at: u64) -> Self {
        self.submitted_at = submitted_at;
        self
    }

    pub fn is_consistent(&self) -> bool {
        self.correct == (self.truth == self.answer)
    }
}

/// Per-evaluator error rates as fractions in `[0, 1]`.
///
/// A class the evaluator never saw has no error rate; such a score is
/// `partial` and its `combined_error` covers only the class that was seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorScore<T = f64> {
    pub evaluator_id: String,
    pub fake_error: Option<T>,
    pub real_error: Option<T>,
    pub combined_error: T,
    pub n_fake: usize,
    pub n_real: usize,
    pub partial: bool,
}

pub fn evaluator_error_rates<T: Scalar>(judgments: &[Judgment]) -> Result<EvaluatorScore<T>> {
    let first = judgments.first().ok_or_else(|| HypeError::Input("no judgments for evaluator".into()))?;
    let evaluator_id = &first.evaluator_id;
    let (mut n_fake, mut n_real, mut fooled, mut misjudged) = (0usize, 0usize, 0usize, 0usize);
    for j in judgments {
        if &j.evaluator_id != evaluator_id {
            return Err(HypeError::Input(format!("judgments mix evaluators {evaluator_id} and {}", j.evaluator_id)));
        }
        if !j.is_consistent() {
            return Err(HypeError::Input(format!(
                "judgment on {} has correct={} but truth {} and answer {}",
                j.image_id, j.correct, j.truth, j.answer
            )));
        }
        match j.truth {
            Label::Fake => {
                n_fake += 1;
                fooled += usize::from(!j.correct);
            }
            Label::Real => {
                n_real += 1;
                misjudged += usize::from(!j.correct);
            }
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| T::from_count(num) / T::from_count(den));
    Ok(EvaluatorScore {
        evaluator_id: evaluator_id.clone(),
        fake_error: ratio(fooled, n_fake),
        real_error: ratio(misjudged, n_real),
        combined_error: T::from_count(fooled + misjudged) / T::from_count(judgments.len()),
        n_fake,
        n_real,
        partial: n_fake == 0 || n_real == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Time,
    Infinity,
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMode::Time => "time",
            ScoreMode::Infinity => "infinity",
        })
    }
}

/// A model's score in percent (untimed) or milliseconds (timed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScoreReport<T = f64> {
    pub model_id: String,
    pub mode: ScoreMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub score: T,
    pub fake_error_mean: Option<T>,
    pub real_error_mean: Option<T>,
    pub std: Option<T>,
    pub ci_low: Option<T>,
    pub ci_high: Option<T>,
    pub n_evaluators: usize,
    #[serde(default)]
    pub incomplete_sessions: usize,
    #[serde(default)]
    pub partial: bool,
}

impl<T: Scalar> ModelScoreReport<T> {
    pub fn with_bootstrap(mut self, boot: &BootstrapResult<T>) -> Self {
        self.std = Some(boot.std);
        self.ci_low = Some(boot.ci_low);
        self.ci_high = Some(boot.ci_high);
        self
    }

    pub fn with_incomplete(mut self, incomplete_sessions: usize) -> Self {
        self.incomplete_sessions = incomplete_sessions;
        self
    }

    /// Marks the report partial when fewer evaluators finished than were targeted.
    pub fn with_target(mut self, target_evaluators: usize) -> Self {
        self.partial |= self.n_evaluators < target_evaluators;
        self
    }

    /// One row in the layout of the published results tables, rounded to one decimal.
    pub fn table_row(&self) -> String {
        let one = |x: Option<T>| x.map_or("-".to_string(), |v| format!("{:.1}", v.as_f64()));
        let ci = match (self.ci_low, self.ci_high) {
            (Some(lo), Some(hi)) => format!("{:.1} -- {:.1}", lo.as_f64(), hi.as_f64()),
            _ => "-".into(),
        };
        let unit = match self.mode {
            ScoreMode::Infinity => "%",
            ScoreMode::Time => "ms",
        };
        let pct = |x: Option<T>| x.map_or("-".to_string(), |v| format!("{:.1}%", v.as_f64()));
        format!(
            "{}\t{}\t{:.1}{}\t{}\t{}\t{}\t{}\t{}{}",
            self.rank.map_or("-".to_string(), |r| r.to_string()),
            self.model_id,
            self.score.as_f64(),
            unit,
            pct(self.fake_error_mean),
            pct(self.real_error_mean),
            one(self.std),
            ci,
            self.n_evaluators,
            if self.partial { "\tpartial" } else { "" },
        )
    }
}

pub const TABLE_HEADER: &str = "rank\tmodel\tscore\tfakes_error\treals_error\tstd\t95% CI\tn";

/// Ranks reports by descending score and renders them as a table.
pub fn render_table<T: Scalar>(reports: &mut [ModelScoreReport<T>]) -> String {
    reports.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for (i, r) in reports.iter_mut().enumerate() {
        r.rank = Some(i + 1);
        out.push_str(&r.table_row());
        out.push('\n');
    }
    out
}

/// Untimed score: mean per-evaluator error rate, in percent.
pub fn hype_infinity<T: Scalar>(model_id: &str, per_evaluator: &[EvaluatorScore<T>]) -> Result<ModelScoreReport<T>> {
    if per_evaluator.is_empty() {
        return Err(HypeError::Input("no evaluator scores".into()));
    }
    let hundred = T::lit(100.0);
    let combined: Vec<T> = per_evaluator.iter().map(|e| e.combined_error).collect();
    let class_mean = |f: fn(&EvaluatorScore<T>) -> Option<T>| {
        let xs: Vec<T> = per_evaluator.iter().filter_map(f).collect();
        (!xs.is_empty()).then(|| mean(&xs) * hundred)
    };
    Ok(ModelScoreReport {
        model_id: model_id.to_string(),
        mode: ScoreMode::Infinity,
        rank: None,
        score: mean(&combined) * hundred,
        fake_error_mean: class_mean(|e| e.fake_error),
        real_error_mean: class_mean(|e| e.real_error),
        std: None,
        ci_low: None,
        ci_high: None,
        n_evaluators: per_evaluator.len(),
        incomplete_sessions: 0,
        partial: per_evaluator.iter().any(|e| e.partial),
    })
}

/// Timed score: mean session threshold, in milliseconds.
pub fn hype_time<T: Scalar>(model_id: &str, thresholds: &[SessionThreshold<T>]) -> Result<ModelScoreReport<T>> {
    if thresholds.is_empty() {
        return Err(HypeError::Input("no session thresholds".into()));
    }
    let values: Vec<T> = thresholds.iter().map(|t| t.threshold_ms).collect();
    Ok(ModelScoreReport {
        model_id: model_id.to_string(),
        mode: ScoreMode::Time,
        rank: None,
        score: mean(&values),
        fake_error_mean: None,
        real_error_mean: None,
        std: None,
        ci_low: None,
        ci_high: None,
        n_evaluators: thresholds.len(),
        incomplete_sessions: 0,
        partial: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn session(fakes: usize, fooled: usize, reals: usize, misjudged: usize) -> Vec<Judgment> {
        let mut out = Vec::new();
        for i in 0..fakes {
            let answer = if i < fooled { Label::Real } else { Label::Fake };
            out.push(Judgment::new("e1", &format!("f{i}"), Label::Fake, answer));
        }
        for i in 0..reals {
            let answer = if i < misjudged { Label::Fake } else { Label::Real };
            out.push(Judgment::new("e1", &format!("r{i}"), Label::Real, answer));
        }
        out
    }

    #[test]
    fn balanced_error_rates() {
        let s: EvaluatorScore = evaluator_error_rates(&session(50, 40, 50, 10)).unwrap();
        assert_eq!(s.fake_error, Some(0.8));
        assert_eq!(s.real_error, Some(0.2));
        assert_eq!(s.combined_error, 0.5);
        assert!(!s.partial);
    }

    #[test]
    fn perfect_and_constant_answers() {
        let s: EvaluatorScore = evaluator_error_rates(&session(50, 0, 50, 0)).unwrap();
        assert_eq!((s.fake_error, s.real_error, s.combined_error), (Some(0.0), Some(0.0), 0.0));
        let s: EvaluatorScore = evaluator_error_rates(&session(50, 50, 50, 0)).unwrap();
        assert_eq!((s.fake_error, s.real_error, s.combined_error), (Some(1.0), Some(0.0), 0.5));
    }

    #[test]
    fn missing_class_is_partial() {
        let s: EvaluatorScore = evaluator_error_rates(&session(10, 3, 0, 0)).unwrap();
        assert!(s.partial);
        assert_eq!(s.real_error, None);
        assert_eq!(s.fake_error, Some(0.3));
    }

    #[test]
    fn rejects_mixed_or_inconsistent_input() {
        assert!(evaluator_error_rates::<f64>(&[]).is_err());
        let mut js = session(2, 0, 2, 0);
        js[1].evaluator_id = "other".into();
        assert!(evaluator_error_rates::<f64>(&js).is_err());
        let mut js = session(2, 0, 2, 0);
        js[0].correct = false;
        assert!(evaluator_error_rates::<f64>(&js).is_err());
    }

    fn evaluator(fake: f64, real: f64) -> EvaluatorScore {
        EvaluatorScore {
            evaluator_id: "e".into(),
            fake_error: Some(fake),
            real_error: Some(real),
            combined_error: (fake + real) / 2.0,
            n_fake: 50,
            n_real: 50,
            partial: false,
        }
    }

    #[test]
    fn infinity_score_from_class_means() {
        let r = hype_infinity("m", &[evaluator(0.622, 0.393)]).unwrap();
        assert!((r.score - 50.75).abs() < 1e-9);
        assert!((r.score - 50.7).abs() <= 0.1);
        let r = hype_infinity("m", &[evaluator(0.017, 0.059)]).unwrap();
        assert!((r.score - 3.8).abs() < 1e-9);
        let r = hype_infinity("m", &[evaluator(0.0, 0.0)]).unwrap();
        assert_eq!(r.score, 0.0);
        assert!(hype_infinity::<f64>("m", &[]).is_err());
    }

    #[test]
    fn time_score_is_mean_threshold() {
        let t = |v: f64| SessionThreshold { evaluator_id: "e".into(), threshold_ms: v };
        assert_eq!(hype_time("m", &[t(500.0)]).unwrap().score, 500.0);
        assert_eq!(hype_time("m", &vec![t(100.0); 30]).unwrap().score, 100.0);
        assert!(hype_time::<f64>("m", &[]).is_err());
    }

    #[test]
    fn table_rendering_ranks_by_score() {
        let mut reports = vec![
            hype_infinity("low", &[evaluator(0.017, 0.059)]).unwrap(),
            hype_infinity("high", &[evaluator(0.622, 0.393)]).unwrap(),
        ];
        let table = render_table(&mut reports);
        assert_eq!(reports[0].model_id, "high");
        assert_eq!(reports[0].rank, Some(1));
        assert!(table.contains("1\thigh\t"), "{table}");
        assert!(table.contains("%\t62.2%\t39.3%\t"), "{table}");
    }

    proptest! {
        #[test]
        fn relabeling_preserves_combined_error(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)
        ) {
            let lab = |b: bool| if b { Label::Real } else { Label::Fake };
            let js: Vec<Judgment> = pairs.iter().enumerate()
                .map(|(i, &(t, a))| Judgment::new("e", &i.to_string(), lab(t), lab(a)))
                .collect();
            let swapped: Vec<Judgment> = js.iter()
                .map(|j| Judgment::new("e", &j.image_id, j.truth.flipped(), j.answer.flipped()))
                .collect();
            let a: EvaluatorScore = evaluator_error_rates(&js).unwrap();
            let b: EvaluatorScore = evaluator_error_rates(&swapped).unwrap();
            prop_assert_eq!(a.combined_error, b.combined_error);
            prop_assert_eq!(a.fake_error, b.real_error);
        }

        #[test]
        fn scores_in_range_and_order_free(
            rates in prop::collection::vec((0u32..=50, 0u32..=50), 1..40),
            seed in any::<u64>(),
        ) {
            let evals: Vec<EvaluatorScore> = rates.iter().enumerate().map(|(i, &(f, r))| {
                let mut e = evaluator(f as f64 / 50.0, r as f64 / 50.0);
                e.evaluator_id = i.to_string();
                e
            }).collect();
            let a = hype_infinity("m", &evals).unwrap();
            prop_assert!((0.0..=100.0).contains(&a.score));
            let mut shuffled = evals.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = hype_infinity("m", &shuffled).unwrap();
            prop_assert!((a.score - b.score).abs() < 1e-9);
            // Balanced sets: the score is the mean of the two class means.
            let (f, r) = (a.fake_error_mean.unwrap(), a.real_error_mean.unwrap());
            prop_assert!((a.score - (f + r) / 2.0).abs() < 1e-9);
        }
    }
}
