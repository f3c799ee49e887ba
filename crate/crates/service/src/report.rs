//! Run manifests, scores as folds over the response log, and cross-model comparison.

use std::collections::BTreeMap;
use std::path::Path;

use hype_core::pool::{derive_seed, TaskShape};
use hype_core::scoring::{evaluator_error_rates, hype_infinity, hype_time, ScoreMode};
use hype_core::stats::{bootstrap_ci, one_way_anova, spearman, tukey_hsd};
use hype_core::{AnovaResult, HypeError, Judgment, ModelScoreReport, SessionMode, StaircaseConfig, StaircaseSession};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::log::{read_log, ResponseLogEntry};
use crate::metrics::MetricTable;

pub const DEFAULT_TARGET_EVALUATORS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Open,
    Collecting,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub model_id: String,
    #[serde(default)]
    pub dataset_id: String,
    pub mode: ScoreMode,
    pub pool_id: String,
    pub target_evaluators: usize,
    /// Drives task assignment, mask generation and the score bootstrap.
    pub seed: u64,
    pub status: RunStatus,
    pub created_at: u64,
}

impl RunManifest {
    pub fn session_mode(&self) -> SessionMode {
        match self.mode {
            ScoreMode::Time => SessionMode::Time,
            ScoreMode::Infinity => SessionMode::Infinity,
        }
    }

    /// Moves the status forward; backward moves are ignored.
    pub fn advance(&mut self, to: RunStatus) -> bool {
        if to > self.status {
            self.status = to;
            true
        } else {
            false
        }
    }
}

/// Client request to create a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDraft {
    pub run_id: String,
    pub model_id: String,
    #[serde(default)]
    pub dataset_id: String,
    pub mode: ScoreMode,
    pub pool_id: String,
    #[serde(default)]
    pub target_evaluators: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunDraft {
    pub fn into_manifest(self, created_at: u64) -> Result<RunManifest> {
        let valid_id = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !valid_id(&self.run_id) || self.run_id.starts_with('.') {
            return Err(ServiceError::BadRequest(format!("invalid run id {:?}", self.run_id)));
        }
        if !valid_id(&self.pool_id) || self.pool_id.starts_with('.') {
            return Err(ServiceError::BadRequest(format!("invalid pool id {:?}", self.pool_id)));
        }
        if self.model_id.is_empty() {
            return Err(ServiceError::BadRequest("model_id is required".into()));
        }
        let target_evaluators = self.target_evaluators.unwrap_or(DEFAULT_TARGET_EVALUATORS);
        if target_evaluators == 0 {
            return Err(ServiceError::BadRequest("target_evaluators must be at least 1".into()));
        }
        Ok(RunManifest {
            seed: self.seed.unwrap_or_else(|| derive_seed(0, &["run", &self.run_id])),
            run_id: self.run_id,
            model_id: self.model_id,
            dataset_id: self.dataset_id,
            mode: self.mode,
            pool_id: self.pool_id,
            target_evaluators,
            status: RunStatus::Open,
            created_at,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringParams {
    pub staircase: StaircaseConfig,
    pub iterations: usize,
    pub resample_size: usize,
}

/// A run's report plus the per-evaluator values behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRun {
    pub manifest: RunManifest,
    pub report: ModelScoreReport,
    /// Percent (untimed) or milliseconds (timed), in evaluator order.
    pub per_evaluator: Vec<f64>,
}

/// Folds a run's log into its score. Only sessions that answered every
/// assigned stimulus count; the rest are reported as incomplete.
pub fn fold_run(manifest: &RunManifest, entries: &[ResponseLogEntry], params: &ScoringParams) -> Result<ScoredRun> {
    let shape = TaskShape::for_mode(manifest.session_mode(), &params.staircase);
    let mut by_evaluator: BTreeMap<&str, Vec<&ResponseLogEntry>> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.run_id == manifest.run_id) {
        by_evaluator.entry(e.judgment.evaluator_id.as_str()).or_default().push(e);
    }
    let mut incomplete = 0;
    let mut complete: Vec<(&str, Vec<&ResponseLogEntry>)> = Vec::new();
    for (evaluator, mut es) in by_evaluator {
        es.sort_by_key(|e| e.seq);
        if es.len() >= shape.total() {
            complete.push((evaluator, es));
        } else {
            incomplete += 1;
        }
    }
    if complete.is_empty() {
        return Err(HypeError::State(format!("run {} has no completed sessions", manifest.run_id)).into());
    }
    let (report, per_evaluator): (ModelScoreReport, Vec<f64>) = match manifest.mode {
        ScoreMode::Infinity => {
            let scores = complete
                .iter()
                .map(|(_, es)| {
                    let js: Vec<Judgment> = es.iter().map(|e| e.judgment.clone()).collect();
                    evaluator_error_rates::<f64>(&js)
                })
                .collect::<hype_core::Result<Vec<_>>>()?;
            let values = scores.iter().map(|s| s.combined_error * 100.0).collect();
            (hype_infinity(&manifest.model_id, &scores)?, values)
        }
        ScoreMode::Time => {
            let thresholds = complete
                .iter()
                .map(|(evaluator, es)| replay_staircase(evaluator, es, &params.staircase))
                .collect::<Result<Vec<_>>>()?;
            let values = thresholds.iter().map(|t| t.threshold_ms).collect();
            (hype_time(&manifest.model_id, &thresholds)?, values)
        }
    };
    let boot = bootstrap_ci(
        &per_evaluator,
        params.resample_size,
        params.iterations,
        derive_seed(manifest.seed, &["score", &manifest.run_id]),
    )?;
    let report = report.with_bootstrap(&boot).with_incomplete(incomplete).with_target(manifest.target_evaluators);
    Ok(ScoredRun { manifest: manifest.clone(), report, per_evaluator })
}

/// Re-drives the staircase from logged answers, checking every logged exposure.
fn replay_staircase(
    evaluator: &str,
    entries: &[&ResponseLogEntry],
    config: &StaircaseConfig,
) -> Result<hype_core::SessionThreshold> {
    let mut session = StaircaseSession::new(*config)?;
    for e in entries {
        let commanded = session.current_exposure();
        if e.judgment.exposure_ms != commanded {
            return Err(HypeError::Input(format!(
                "session {} seq {}: logged exposure {:?} but the staircase commands {:?}",
                e.session_id, e.seq, e.judgment.exposure_ms, commanded
            ))
            .into());
        }
        session.record(e.judgment.correct)?;
    }
    Ok(session.threshold(evaluator)?)
}

pub fn score_run(
    manifest: &RunManifest,
    entries: &[ResponseLogEntry],
    params: &ScoringParams,
) -> Result<ModelScoreReport> {
    Ok(fold_run(manifest, entries, params)?.report)
}

/// Scores a run from its files alone. A log whose last line was torn still
/// scores over the intact prefix, and the report is marked partial.
pub fn replay(log_path: &Path, manifest_path: &Path, params: &ScoringParams) -> Result<ModelScoreReport> {
    let manifest: RunManifest = serde_json::from_slice(&std::fs::read(manifest_path)?)?;
    let log = read_log(log_path)?;
    let mut report = score_run(&manifest, &log.entries, params)?;
    report.partial |= log.partial;
    Ok(report)
}

/// The canonical serialized form of a report; live scoring and replay both emit this.
pub fn report_json(report: &ModelScoreReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub run_id: String,
    pub model_id: String,
    pub score: f64,
    pub n_evaluators: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTukeyPair {
    pub model_a: String,
    pub model_b: String,
    pub mean_diff: f64,
    pub q_statistic: f64,
    pub p_value: f64,
    pub significant_at_05: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCorrelation {
    pub metric: String,
    pub models: Vec<String>,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub mode: ScoreMode,
    pub models: Vec<ModelSummary>,
    pub anova: AnovaResult,
    pub tukey: Vec<NamedTukeyPair>,
    pub correlations: Vec<MetricCorrelation>,
    pub warnings: Vec<String>,
}

/// Spearman correlation of model scores against every metric in `metrics`.
/// Models without a value are skipped with a warning; fewer than three
/// matched models, or a constant column, leaves the correlation empty.
pub fn metric_correlations(scores: &[(String, f64)], metrics: &MetricTable) -> (Vec<MetricCorrelation>, Vec<String>) {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for metric in metrics.metrics() {
        let mut models = Vec::new();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (model, score) in scores {
            match metrics.get(model, metric) {
                Some(v) => {
                    models.push(model.clone());
                    xs.push(*score);
                    ys.push(v);
                }
                None => warnings.push(format!("{metric}: no value for model {model}, skipped")),
            }
        }
        let (rho, p_value) = if xs.len() < 3 {
            warnings.push(format!("{metric}: {} matched models, need at least 3", xs.len()));
            (None, None)
        } else {
            match spearman(&xs, &ys) {
                Ok(r) => (Some(r.rho), Some(r.p_value)),
                Err(e) => {
                    warnings.push(format!("{metric}: {e}"));
                    (None, None)
                }
            }
        };
        out.push(MetricCorrelation { metric: metric.to_string(), models, rho, p_value });
    }
    (out, warnings)
}

/// Separability (ANOVA and Tukey over per-evaluator scores) and metric correlations.
pub fn compare_models(runs: &[ScoredRun], metrics: &MetricTable) -> Result<CompareReport> {
    if runs.len() < 2 {
        return Err(ServiceError::BadRequest("comparison needs at least two runs".into()));
    }
    let mode = runs[0].manifest.mode;
    if runs.iter().any(|r| r.manifest.mode != mode) {
        return Err(ServiceError::BadRequest("cannot compare timed and untimed runs".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for r in runs {
        if !seen.insert(r.manifest.model_id.as_str()) {
            return Err(ServiceError::Conflict(format!("model {} appears in more than one run", r.manifest.model_id)));
        }
    }
    let groups: Vec<&[f64]> = runs.iter().map(|r| r.per_evaluator.as_slice()).collect();
    let anova = one_way_anova(&groups)?;
    let tukey = tukey_hsd(&groups)?
        .pairs
        .into_iter()
        .map(|p| NamedTukeyPair {
            model_a: runs[p.group_a].manifest.model_id.clone(),
            model_b: runs[p.group_b].manifest.model_id.clone(),
            mean_diff: p.mean_diff,
            q_statistic: p.q_statistic,
            p_value: p.p_value,
            significant_at_05: p.significant_at_05,
        })
        .collect();
    let scores: Vec<(String, f64)> = runs.iter().map(|r| (r.manifest.model_id.clone(), r.report.score)).collect();
    let (correlations, warnings) = metric_correlations(&scores, metrics);
    Ok(CompareReport {
        mode,
        models: runs
            .iter()
            .map(|r| ModelSummary {
                run_id: r.manifest.run_id.clone(),
                model_id: r.manifest.model_id.clone(),
                score: r.report.score,
                n_evaluators: r.report.n_evaluators,
            })
            .collect(),
        anova,
        tukey,
        correlations,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use hype_core::Label;

    fn manifest(mode: ScoreMode, target: usize) -> RunManifest {
        RunDraft {
            run_id: "r1".into(),
            model_id: "m".into(),
            dataset_id: "d".into(),
            mode,
            pool_id: "p".into(),
            target_evaluators: Some(target),
            seed: Some(3),
        }
        .into_manifest(0)
        .unwrap()
    }

    fn params(iterations: usize) -> ScoringParams {
        ScoringParams { staircase: StaircaseConfig::default(), iterations, resample_size: 30 }
    }

    /// `wrong_fakes` of 50 fakes fooled, `wrong_reals` of 50 reals misjudged.
    fn infinity_session(evaluator: &str, wrong_fakes: usize, wrong_reals: usize) -> Vec<ResponseLogEntry> {
        (0..100)
            .map(|i| {
                let (truth, wrong) =
                    if i < 50 { (Label::Fake, i < wrong_fakes) } else { (Label::Real, i - 50 < wrong_reals) };
                let answer = if wrong { truth.flipped() } else { truth };
                ResponseLogEntry {
                    seq: i as u64 + 1,
                    session_id: format!("s-{evaluator}"),
                    run_id: "r1".into(),
                    mode: SessionMode::Infinity,
                    judgment: Judgment::new(evaluator, &format!("img{i}"), truth, answer),
                    received_at: 0,
                    timing_flagged: false,
                }
            })
            .collect()
    }

    #[test]
    fn draft_validation() {
        assert_eq!(manifest(ScoreMode::Infinity, 30).status, RunStatus::Open);
        let mut d = RunDraft {
            run_id: "r".into(),
            model_id: "m".into(),
            dataset_id: String::new(),
            mode: ScoreMode::Time,
            pool_id: "p".into(),
            target_evaluators: Some(0),
            seed: None,
        };
        assert!(d.clone().into_manifest(0).is_err());
        d.target_evaluators = None;
        assert_eq!(d.clone().into_manifest(0).unwrap().target_evaluators, 30);
        d.run_id = "../etc".into();
        assert!(d.into_manifest(0).is_err());
    }

    #[test]
    fn status_only_moves_forward() {
        let mut m = manifest(ScoreMode::Infinity, 30);
        assert!(m.advance(RunStatus::Complete));
        assert!(!m.advance(RunStatus::Collecting));
        assert_eq!(m.status, RunStatus::Complete);
    }

    #[test]
    fn single_perfect_evaluator() {
        let r = score_run(&manifest(ScoreMode::Infinity, 1), &infinity_session("e", 0, 0), &params(1000)).unwrap();
        assert_eq!(r.score, 0.0);
        assert_eq!((r.ci_low, r.ci_high), (Some(0.0), Some(0.0)));
        assert!(!r.partial);
    }

    #[test]
    fn incomplete_sessions_are_counted_not_scored() {
        let mut log = infinity_session("a", 40, 10);
        log.extend(infinity_session("b", 0, 0).into_iter().take(60));
        let r = score_run(&manifest(ScoreMode::Infinity, 30), &log, &params(100)).unwrap();
        assert_eq!(r.n_evaluators, 1);
        assert_eq!(r.incomplete_sessions, 1);
        assert_eq!(r.score, 50.0);
        assert_eq!(r.fake_error_mean, Some(80.0));
        assert!(r.partial);
    }

    #[test]
    fn no_completed_sessions_is_a_state_error() {
        let log: Vec<_> = infinity_session("a", 0, 0).into_iter().take(99).collect();
        assert!(matches!(
            score_run(&manifest(ScoreMode::Infinity, 30), &log, &params(10)),
            Err(ServiceError::Core(HypeError::State(_)))
        ));
    }

    #[test]
    fn score_ignores_log_order_across_sessions() {
        let a = infinity_session("a", 20, 5);
        let b = infinity_session("b", 30, 15);
        let ab: Vec<_> = a.iter().chain(&b).cloned().collect();
        let ba: Vec<_> = b.iter().chain(&a).cloned().collect();
        let m = manifest(ScoreMode::Infinity, 2);
        assert_eq!(
            report_json(&score_run(&m, &ab, &params(500)).unwrap()),
            report_json(&score_run(&m, &ba, &params(500)).unwrap())
        );
    }

    #[test]
    fn timed_log_with_wrong_exposure_is_rejected() {
        let mut session = StaircaseSession::new(StaircaseConfig::default()).unwrap();
        let mut log = Vec::new();
        for i in 0..450u64 {
            let exposure = session.current_exposure().unwrap();
            let correct = i % 4 != 0;
            session.record(correct).unwrap();
            let answer = if correct { Label::Fake } else { Label::Real };
            log.push(ResponseLogEntry {
                seq: i + 1,
                session_id: "s".into(),
                run_id: "r1".into(),
                mode: SessionMode::Time,
                judgment: Judgment::new("e", &format!("i{i}"), Label::Fake, answer).with_exposure(exposure),
                received_at: 0,
                timing_flagged: false,
            });
        }
        let m = manifest(ScoreMode::Time, 1);
        let r = score_run(&m, &log, &params(10)).unwrap();
        assert_eq!(r.score, session.threshold::<f64>("e").unwrap().threshold_ms);
        log[7].judgment.exposure_ms = Some(999);
        assert!(score_run(&m, &log, &params(10)).is_err());
    }

    #[test]
    fn correlations_skip_missing_models() {
        let metrics =
            MetricTable::from_csv("model_id,metric,value\na,FID,1\nb,FID,2\nc,FID,3\nd,FID,4\na,KID,1\n".as_bytes())
                .unwrap();
        let scores: Vec<(String, f64)> = [("a", 10.0), ("b", 8.0), ("c", 6.0), ("d", 1.0), ("e", 0.5)]
            .iter()
            .map(|(m, s)| (m.to_string(), *s))
            .collect();
        let (cors, warnings) = metric_correlations(&scores, &metrics);
        let fid = cors.iter().find(|c| c.metric == "FID").unwrap();
        assert_eq!(fid.rho, Some(-1.0));
        assert_eq!(fid.models.len(), 4);
        assert!(cors.iter().find(|c| c.metric == "KID").unwrap().rho.is_none());
        assert!(warnings.iter().any(|w| w.contains("model e")));
    }

    #[test]
    fn identical_groups_are_not_separable() {
        let m = manifest(ScoreMode::Infinity, 30);
        let run = |model: &str| {
            let mut manifest = m.clone();
            manifest.model_id = model.into();
            ScoredRun {
                manifest,
                report: score_run(&m, &infinity_session("a", 1, 1), &params(10)).unwrap(),
                per_evaluator: vec![10.0, 12.0, 14.0],
            }
        };
        let c = compare_models(&[run("x"), run("y")], &MetricTable::default()).unwrap();
        assert_eq!(c.anova.f_statistic, 0.0);
        assert_eq!(c.anova.p_value, 1.0);
        assert!(!c.tukey[0].significant_at_05);
        assert!(compare_models(&[run("x"), run("x")], &MetricTable::default()).is_err());
    }
}
