#![allow(dead_code)]

use std::collections::HashMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hype_core::pool::{build_pool, sha256_hex, write_manifest, ImagePool, ImageRecord};
use hype_core::Label;
use hype_service::report::RunDraft;
use hype_service::{api, Config, Store};
use image::{ImageFormat, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::StatusCode;
use serde_json::{json, Value};
use tempfile::TempDir;

/// Small PNGs on disk with manifests, plus the checksum -> label lookup a
/// scripted evaluator uses in place of eyes.
pub struct Corpus {
    pub dir: TempDir,
    pub reals: Vec<ImageRecord>,
    pub fakes: Vec<ImageRecord>,
    pub truth: HashMap<String, Label>,
}

impl Corpus {
    pub fn new(n_real: usize, models: &[(&str, usize)]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let img_dir = dir.path().join("images");
        std::fs::create_dir_all(&img_dir).unwrap();
        let mut truth = HashMap::new();
        let mut make = |name: String, source: Label, model: Option<&str>| {
            let mut rng = ChaCha8Rng::seed_from_u64(hype_core::pool::derive_seed(0, &[&name]));
            let img = RgbImage::from_fn(32, 32, |_, _| image::Rgb(rng.random()));
            let mut bytes = Vec::new();
            img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png).unwrap();
            let path = img_dir.join(format!("{name}.png"));
            std::fs::write(&path, &bytes).unwrap();
            let checksum = sha256_hex(&bytes);
            truth.insert(checksum.clone(), source);
            ImageRecord {
                image_id: name,
                source,
                model_id: model.map(str::to_string),
                class_label: None,
                uri: path.to_string_lossy().into_owned(),
                checksum,
            }
        };
        let reals = (0..n_real).map(|i| make(format!("real-{i:04}"), Label::Real, None)).collect();
        let mut fakes = Vec::new();
        for (model, n) in models {
            for i in 0..*n {
                fakes.push(make(format!("{model}-{i:04}"), Label::Fake, Some(model)));
            }
        }
        Self { dir, reals, fakes, truth }
    }

    pub fn fakes_of(&self, model: &str) -> Vec<ImageRecord> {
        self.fakes.iter().filter(|r| r.model_id.as_deref() == Some(model)).cloned().collect()
    }

    pub fn pool(&self, pool_id: &str, model: &str, k: usize) -> ImagePool {
        build_pool(pool_id, &self.reals, &self.fakes_of(model), k, 1).unwrap()
    }

    /// Writes line-delimited manifests for the CLI and returns (reals, fakes) paths.
    pub fn write_manifests(&self, model: &str) -> (PathBuf, PathBuf) {
        let reals = self.dir.path().join("reals.jsonl");
        let fakes = self.dir.path().join(format!("fakes-{model}.jsonl"));
        write_manifest(&reals, &self.reals).unwrap();
        write_manifest(&fakes, &self.fakes_of(model)).unwrap();
        (reals, fakes)
    }

    pub fn label_of(&self, bytes: &[u8]) -> Label {
        *self.truth.get(&sha256_hex(bytes)).expect("served image is in the corpus")
    }
}

pub fn test_config(data_dir: &Path) -> Config {
    Config {
        data_dir: data_dir.to_path_buf(),
        require_qualification: false,
        bootstrap_iterations: 2000,
        ..Config::default()
    }
}

pub fn draft(run_id: &str, model_id: &str, mode: &str, pool_id: &str, target: usize) -> RunDraft {
    serde_json::from_value(json!({
        "run_id": run_id,
        "model_id": model_id,
        "dataset_id": "synthetic",
        "mode": mode,
        "pool_id": pool_id,
        "target_evaluators": target,
        "seed": 7,
    }))
    .unwrap()
}

/// Serves the store on an ephemeral port for the lifetime of the runtime.
pub async fn spawn_server(store: Arc<Store>) -> Client {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, api::router(store)).await.unwrap() });
    Client { http: reqwest::Client::new(), base: format!("http://{addr}") }
}

pub struct Client {
    pub http: reqwest::Client,
    pub base: String,
}

impl Client {
    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn get_text(&self, path: &str) -> (StatusCode, String) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status(), r.text().await.unwrap())
    }

    pub async fn get_bytes(&self, path: &str) -> (StatusCode, Option<String>, Vec<u8>) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        let ct = r.headers().get("content-type").map(|v| v.to_str().unwrap().to_string());
        (r.status(), ct, r.bytes().await.unwrap().to_vec())
    }

    pub async fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let r = self.http.post(format!("{}{path}", self.base)).json(body).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn post_text(&self, path: &str, body: &str) -> (StatusCode, Value) {
        let r = self.http.post(format!("{}{path}", self.base)).body(body.to_string()).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn open_session(&self, run_id: &str, evaluator: &str) -> (StatusCode, Value) {
        let path = if run_id == "qualification" {
            "/qualification/sessions".to_string()
        } else {
            format!("/runs/{run_id}/sessions")
        };
        self.post(&path, &json!({ "evaluator_id": evaluator })).await
    }

    /// Drives a session to completion. `answer` sees the true label (recovered
    /// from the served bytes) and the commanded exposure, and returns the
    /// evaluator's response. Returns every descriptor and outcome.
    pub async fn run_session(
        &self,
        corpus: &Corpus,
        session_id: &str,
        mut answer: impl FnMut(Label, Option<u32>) -> Label,
    ) -> (Vec<Value>, Vec<Value>) {
        let mut descriptors = Vec::new();
        let mut outcomes = Vec::new();
        loop {
            let (status, d) = self.get(&format!("/sessions/{session_id}/next")).await;
            assert_eq!(status, StatusCode::OK, "{d}");
            let (status, _, bytes) = self.get_bytes(d["image_uri"].as_str().unwrap()).await;
            assert_eq!(status, StatusCode::OK);
            let exposure = d["exposure_ms"].as_u64().map(|e| e as u32);
            let response = answer(corpus.label_of(&bytes), exposure);
            let (status, o) = self
                .post(&format!("/sessions/{session_id}/responses"), &json!({ "seq": d["seq"], "answer": response }))
                .await;
            assert_eq!(status, StatusCode::OK, "{o}");
            descriptors.push(d);
            let done = o["completed"].as_bool().unwrap();
            outcomes.push(o);
            if done {
                return (descriptors, outcomes);
            }
        }
    }
}

/// Untimed evaluator with fixed per-class mistake rates.
pub fn untimed_responder(p_fooled: f64, p_misjudge: f64, seed: u64) -> impl FnMut(Label, Option<u32>) -> Label {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move |truth, _| {
        let wrong = match truth {
            Label::Fake => rng.random_bool(p_fooled),
            Label::Real => rng.random_bool(p_misjudge),
        };
        if wrong {
            truth.flipped()
        } else {
            truth
        }
    }
}

/// Timed evaluator following a psychometric curve over the commanded exposure.
pub fn timed_responder(model: hype_core::PsychometricModel, seed: u64) -> impl FnMut(Label, Option<u32>) -> Label {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move |truth, exposure| {
        let p = model.p_correct(f64::from(exposure.expect("timed stimulus carries an exposure")));
        if rng.random_bool(p) {
            truth
        } else {
            truth.flipped()
        }
    }
}

/// Same as [`Client::run_session`] but through the store API, for tests that
/// restart the store or inspect its files.
pub fn drive(
    store: &Store,
    corpus: &Corpus,
    session_id: &str,
    limit: Option<u64>,
    mut answer: impl FnMut(Label, Option<u32>) -> Label,
) -> Vec<hype_service::store::SubmitOutcome> {
    let mut outcomes = Vec::new();
    loop {
        let d = store.next_stimulus(session_id, None).unwrap();
        if limit.is_some_and(|l| d.seq > l) {
            return outcomes;
        }
        let truth = corpus.label_of(&store.stimulus_image(session_id, d.seq).unwrap());
        let req = hype_service::store::SubmitRequest {
            seq: d.seq,
            answer: answer(truth, d.exposure_ms),
            measured_exposure_ms: None,
        };
        let o = store.submit_response(session_id, req).unwrap();
        let done = o.completed;
        outcomes.push(o);
        if done {
            return outcomes;
        }
    }
}
