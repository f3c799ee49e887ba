//! Crash recovery and offline replay of response logs.

mod common;

use std::fs;
use std::io::Write;

use common::{draft, drive, test_config, timed_responder, untimed_responder, Corpus};
use hype_core::PsychometricModel;
use hype_service::report::{replay, report_json, ScoringParams};
use hype_service::store::session_id_for;
use hype_service::{Config, ServiceError, Store};
use tempfile::TempDir;

fn params(config: &Config) -> ScoringParams {
    ScoringParams {
        staircase: config.staircase,
        iterations: config.bootstrap_iterations,
        resample_size: config.bootstrap_resample_size,
    }
}

struct Fixture {
    corpus: Corpus,
    data: TempDir,
    config: Config,
}

impl Fixture {
    fn new() -> Self {
        let corpus = Corpus::new(240, &[("gan-a", 240)]);
        let data = tempfile::tempdir().unwrap();
        let config = test_config(data.path());
        Self { corpus, data, config }
    }

    fn open(&self) -> Store {
        Store::open(self.config.clone()).unwrap()
    }

    fn run_dir(&self, run_id: &str) -> std::path::PathBuf {
        self.data.path().join("runs").join(run_id)
    }

    /// An untimed run with `n` finished sessions at a deception rate near 3.8%.
    fn untimed_run(&self, store: &Store, run_id: &str, n: usize, target: usize) {
        if store.pool("p").is_err() {
            store.install_pool(&self.corpus.pool("p", "gan-a", 240)).unwrap();
        }
        store.create_run(draft(run_id, "wgan-gp", "infinity", "p", target)).unwrap();
        for i in 0..n {
            let ev = format!("{run_id}-ev-{i:02}");
            let sid = store.open_session(run_id, &ev).unwrap().session_id;
            drive(store, &self.corpus, &sid, None, untimed_responder(0.017, 0.059, i as u64));
        }
    }
}

#[test]
fn restart_resumes_sessions_mid_block() {
    let fx = Fixture::new();
    let sid = {
        let store = fx.open();
        store.install_pool(&fx.corpus.pool("p", "gan-a", 240)).unwrap();
        store.create_run(draft("t", "m", "time", "p", 3)).unwrap();
        let sid = store.open_session("t", "ev-1").unwrap().session_id;
        drive(&store, &fx.corpus, &sid, Some(160), timed_responder(PsychometricModel::new(300.0, 6.0), 1));
        sid
    };
    // The uninterrupted twin, in a separate data directory.
    let twin = Fixture::new();
    let twin_store = twin.open();
    twin_store.install_pool(&twin.corpus.pool("p", "gan-a", 240)).unwrap();
    twin_store.create_run(draft("t", "m", "time", "p", 3)).unwrap();
    let twin_sid = twin_store.open_session("t", "ev-1").unwrap().session_id;
    assert_eq!(twin_sid, sid);
    drive(&twin_store, &twin.corpus, &sid, Some(160), timed_responder(PsychometricModel::new(300.0, 6.0), 1));

    let store = fx.open();
    let a = store.next_stimulus(&sid, None).unwrap();
    let b = twin_store.next_stimulus(&sid, None).unwrap();
    assert_eq!(a.seq, 161);
    assert_eq!(a.block, 1);
    assert_eq!(a.exposure_ms, b.exposure_ms);
    // Outcomes answered before the restart are still served idempotently.
    let replayed = store
        .submit_response(
            &sid,
            hype_service::store::SubmitRequest { seq: 5, answer: hype_core::Label::Real, measured_exposure_ms: None },
        )
        .unwrap();
    let original = twin_store
        .submit_response(
            &sid,
            hype_service::store::SubmitRequest { seq: 5, answer: hype_core::Label::Fake, measured_exposure_ms: None },
        )
        .unwrap();
    assert_eq!(replayed, original);
    assert!(matches!(store.open_session("t", "ev-1"), Err(ServiceError::Core(_))));
}

#[test]
fn restart_keeps_qualification_and_enrollment() {
    let corpus = Corpus::new(240, &[("gan-a", 240), ("gan-b", 240)]);
    let data = tempfile::tempdir().unwrap();
    let mut config = test_config(data.path());
    config.require_qualification = true;
    {
        let store = Store::open(config.clone()).unwrap();
        store.install_pool(&corpus.pool("pa", "gan-a", 240)).unwrap();
        store.install_pool(&corpus.pool("pb", "gan-b", 240)).unwrap();
        for run in ["r1", "r2"] {
            store.create_run(draft(run, "gan-a", "infinity", "pa", 5)).unwrap();
        }
        let q = store.open_session("qualification", "ev-1").unwrap().session_id;
        drive(&store, &corpus, &q, None, untimed_responder(0.0, 0.0, 0));
        store.open_session("r1", "ev-1").unwrap();
    }
    let store = Store::open(config).unwrap();
    assert!(store.qualification_result("ev-1").unwrap().passed);
    assert_eq!(store.payment("ev-1").base_cents, 100);
    let err = store.open_session("r2", "ev-1").unwrap_err();
    assert!(err.to_string().contains("already assigned to run r1"), "{err}");
}

#[test]
fn replay_reproduces_the_live_report_byte_for_byte() {
    let fx = Fixture::new();
    let store = fx.open();
    fx.untimed_run(&store, "u", 30, 30);
    let live = store.score_json("u").unwrap();
    let dir = fx.run_dir("u");
    let offline = replay(&dir.join("responses.jsonl"), &dir.join("manifest.json"), &params(&fx.config)).unwrap();
    assert_eq!(report_json(&offline), live);

    // A fresh process reading the same directory agrees too.
    drop(store);
    assert_eq!(fx.open().score_json("u").unwrap(), live);
}

#[test]
fn synthetic_wgan_like_run_scores_near_its_rates() {
    let fx = Fixture::new();
    let store = fx.open();
    fx.untimed_run(&store, "u", 30, 30);
    let report = store.scored_run("u").unwrap().report;
    assert_eq!(report.n_evaluators, 30);
    assert!((report.score - 3.8).abs() < 1.0, "{}", report.score);
    let (lo, hi) = (report.ci_low.unwrap(), report.ci_high.unwrap());
    assert!(lo >= 2.0 && hi <= 6.0 && lo <= report.score && report.score <= hi, "{lo}..{hi}");
    assert!(!report.partial);
}

#[test]
fn partial_runs_are_flagged_with_wider_intervals() {
    let fx = Fixture::new();
    let store = fx.open();
    fx.untimed_run(&store, "full", 30, 30);
    fx.untimed_run(&store, "part", 8, 30);
    // An unfinished session is reported but not scored.
    let sid = store.open_session("part", "straggler").unwrap().session_id;
    drive(&store, &fx.corpus, &sid, Some(40), untimed_responder(0.5, 0.5, 9));

    let full = store.scored_run("full").unwrap().report;
    let part = store.scored_run("part").unwrap().report;
    assert!(part.partial && !full.partial);
    assert_eq!(part.n_evaluators, 8);
    assert_eq!(part.incomplete_sessions, 1);
    let width = |r: &hype_core::ModelScoreReport| r.ci_high.unwrap() - r.ci_low.unwrap();
    assert!(width(&part) > width(&full), "{} vs {}", width(&part), width(&full));
}

#[test]
fn torn_log_tail_scores_the_intact_prefix() {
    let fx = Fixture::new();
    let store = fx.open();
    fx.untimed_run(&store, "u", 5, 5);
    drop(store);
    let dir = fx.run_dir("u");
    let log = dir.join("responses.jsonl");
    let bytes = fs::read(&log).unwrap();
    // Cut the final line in half, as a crash during a write would.
    let last_start = bytes[..bytes.len() - 1].iter().rposition(|&b| b == b'\n').unwrap() + 1;
    let cut = last_start + (bytes.len() - last_start) / 2;
    fs::write(&log, &bytes[..cut]).unwrap();

    let report = replay(&log, &dir.join("manifest.json"), &params(&fx.config)).unwrap();
    assert!(report.partial);
    assert_eq!(report.n_evaluators, 4);
    assert_eq!(report.incomplete_sessions, 1);

    // The service truncates the torn line on open and lets the session finish.
    let store = fx.open();
    assert_eq!(fs::read(&log).unwrap().len(), last_start);
    let sid = session_id_for("u", "u-ev-04");
    assert_eq!(store.next_stimulus(&sid, None).unwrap().seq, 100);
    drive(&store, &fx.corpus, &sid, None, untimed_responder(0.0, 0.0, 0));
    assert_eq!(store.scored_run("u").unwrap().report.n_evaluators, 5);
}

#[test]
fn reordered_log_is_reported_as_corrupt() {
    let fx = Fixture::new();
    let store = fx.open();
    fx.untimed_run(&store, "u", 2, 2);
    drop(store);
    let dir = fx.run_dir("u");
    let log = dir.join("responses.jsonl");
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(3, 7);
    let mut f = fs::File::create(&log).unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    drop(f);
    let err = replay(&log, &dir.join("manifest.json"), &params(&fx.config)).unwrap_err();
    assert!(matches!(err, ServiceError::Corrupt { line: 4, .. }), "{err:?}");
    assert!(matches!(Store::open(fx.config.clone()), Err(ServiceError::Corrupt { .. })));
}
