//! The `hype` binary end to end.

mod common;

use std::process::{Command, Output};

use common::{draft, drive, test_config, untimed_responder, Corpus};
use hype_core::simulator::ExperimentReport;
use hype_service::Store;

fn hype(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hype")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn report(out: &Output) -> ExperimentReport {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1);
    serde_json::from_str(&text).unwrap()
}

#[test]
fn simulations_emit_one_json_line() {
    let r = report(&hype(&["simulate", "convergence", "--blocks", "300", "--responder-p", "0.9", "--seed", "3"]));
    assert_eq!(r.experiment, "convergence");
    assert_eq!(r.seed, 3);
    assert!((r.summary_value("mean_drift_per_trial").unwrap() + 6.0).abs() < 1.0);

    let r = report(&hype(&["simulate", "tradeoff", "--pool", "60", "--grid", "10,40", "--iterations", "500"]));
    assert_eq!(r.curve.iter().map(|p| p.n).collect::<Vec<_>>(), [10, 40]);

    let r = report(&hype(&["simulate", "time", "--t75", "250", "--evaluators", "20"]));
    assert_eq!(r.per_evaluator.len(), 20);

    let a = hype(&["simulate", "infinity", "--p-fooled", "0.3", "--p-misjudge", "0.1", "--iterations", "200"]);
    let b = hype(&["simulate", "infinity", "--p-fooled", "0.3", "--p-misjudge", "0.1", "--iterations", "200"]);
    assert_eq!(a.stdout, b.stdout);
    assert!((report(&a).summary_value("score").unwrap() - 20.0).abs() < 3.0);
}

#[test]
fn invalid_input_exits_nonzero() {
    let out = hype(&["simulate", "convergence", "--responder-p", "1.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = hype(&["--config", "/nonexistent/hype.toml", "simulate", "time"]);
    assert!(!out.status.success());
}

#[test]
fn pool_build_score_and_replay_agree() {
    let corpus = Corpus::new(150, &[("gan-a", 150)]);
    let data = tempfile::tempdir().unwrap();
    let d = data.path().to_str().unwrap();
    let (reals, fakes) = corpus.write_manifests("gan-a");
    let out = hype(&[
        "--data",
        d,
        "pool",
        "build",
        "--id",
        "p",
        "--reals",
        reals.to_str().unwrap(),
        "--fakes",
        fakes.to_str().unwrap(),
        "--k",
        "120",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut config = test_config(data.path());
    config.bootstrap_iterations = hype_service::Config::default().bootstrap_iterations;
    {
        let store = Store::open(config).unwrap();
        assert_eq!(store.pool("p").unwrap().real_images.len(), 120);
        store.create_run(draft("r", "gan-a", "infinity", "p", 4)).unwrap();
        for i in 0..3 {
            let sid = store.open_session("r", &format!("ev-{i}")).unwrap().session_id;
            drive(&store, &corpus, &sid, None, untimed_responder(0.2, 0.2, i));
        }
    }
    let scored = hype(&["--data", d, "score", "r"]);
    assert!(scored.status.success(), "{}", String::from_utf8_lossy(&scored.stderr));
    let log = data.path().join("runs/r/responses.jsonl");
    let replayed = hype(&["replay", log.to_str().unwrap()]);
    assert_eq!(replayed.stdout, scored.stdout);
    let v: serde_json::Value = serde_json::from_slice(&scored.stdout).unwrap();
    assert_eq!(v["partial"], true);
    assert!(String::from_utf8_lossy(&replayed.stderr).contains("partial"));

    let out_file = data.path().join("score.json");
    hype(&["--data", d, "--out", out_file.to_str().unwrap(), "score", "r"]);
    assert_eq!(std::fs::read(out_file).unwrap(), scored.stdout);
}
