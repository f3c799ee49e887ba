//! Run and session state, persisted as append-only files under the data directory.
//!
//! ```text
//! data_dir/
//!   pools/<pool_id>.jsonl            pool manifests
//!   runs/<run_id>/manifest.json      run manifest
//!   runs/<run_id>/sessions.jsonl     one line per session opened
//!   runs/<run_id>/responses.jsonl    response log
//!   qualification/sessions.jsonl
//!   qualification/responses.jsonl
//!   metrics.csv
//! ```
//!
//! Assignments are deterministic in (seed, run, evaluator), so session lines
//! only name the evaluator; on startup every session is rebuilt and the
//! response logs are replayed through the same code path as live answers.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use hype_core::masks::{generate_masks, read_uri, MASKS_PER_STIMULUS};
use hype_core::pool::{
    assign_task, build_qualification, compute_payment, derive_seed, grade_qualification, sha256_hex, ImagePool,
    ImageRecord, PaymentStatement, QualificationResult, TaskAssignment, TaskShape,
};
use hype_core::{Judgment, Label, Millis, SessionMode, StaircaseSession};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Result, ServiceError};
use crate::log::{read_log, LogWriter, ResponseLogEntry};
use crate::metrics::MetricTable;
use crate::report::{
    compare_models, fold_run, report_json, CompareReport, RunDraft, RunManifest, RunStatus, ScoredRun, ScoringParams,
};

pub const QUALIFICATION_RUN: &str = "qualification";

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn short_hash(parts: &[&str]) -> String {
    sha256_hex(parts.join("|").as_bytes())[..16].to_string()
}

pub fn session_id_for(run_id: &str, evaluator_id: &str) -> String {
    if run_id == QUALIFICATION_RUN {
        format!("q-{}", short_hash(&[run_id, evaluator_id]))
    } else {
        format!("s-{}", short_hash(&[run_id, evaluator_id]))
    }
}

fn append_json_line<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    f.write_all(&line)?;
    f.sync_data()?;
    Ok(())
}

/// Complete lines only; a torn final line is ignored.
fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut reader = BufReader::new(File::open(path)?);
    let mut buf = String::new();
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 || !buf.ends_with('\n') {
            break;
        }
        if !buf.trim().is_empty() {
            out.push(serde_json::from_str(buf.trim_end())?);
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionEvent {
    session_id: String,
    run_id: String,
    evaluator_id: String,
    mode: SessionMode,
    created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub run_id: String,
    pub evaluator_id: String,
    pub mode: SessionMode,
    pub total_stimuli: usize,
    pub blocks: usize,
    /// Composition notice the client must show before the first trial.
    pub disclosure: String,
    pub next_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Countdown {
    pub labels: Vec<String>,
    pub step_ms: u32,
}

/// What the client needs to present one trial. Carries no label and no image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusDescriptor {
    pub session_id: String,
    pub seq: u64,
    pub mode: SessionMode,
    pub block: usize,
    pub trial_in_block: usize,
    pub total: usize,
    pub image_uri: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exposure_ms: Option<Millis>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub mask_uris: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_ms: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub countdown: Option<Countdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub seq: u64,
    pub answer: Label,
    #[serde(default)]
    pub measured_exposure_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub seq: u64,
    pub correct: bool,
    pub running_bonus_cents: u64,
    pub running_bonus_usd: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_exposure_ms: Option<Millis>,
    pub completed: bool,
    pub timing_flagged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qualification: Option<QualificationResult>,
}

fn usd(cents: u64) -> String {
    format!("${}.{:02}", cents / 100, cents % 100)
}

struct SessionState {
    session_id: String,
    run_id: String,
    evaluator_id: String,
    mode: SessionMode,
    assignment: TaskAssignment,
    staircase: Option<StaircaseSession>,
    outcomes: Vec<SubmitOutcome>,
    correct: u64,
    completed: bool,
    expired: bool,
    last_active: Instant,
}

impl SessionState {
    fn new(event: &SessionEvent, assignment: TaskAssignment, config: &Config) -> Result<Self> {
        let staircase = match event.mode {
            SessionMode::Time => Some(StaircaseSession::new(config.staircase)?),
            _ => None,
        };
        Ok(Self {
            session_id: event.session_id.clone(),
            run_id: event.run_id.clone(),
            evaluator_id: event.evaluator_id.clone(),
            mode: event.mode,
            assignment,
            staircase,
            outcomes: Vec::new(),
            correct: 0,
            completed: false,
            expired: false,
            last_active: Instant::now(),
        })
    }

    fn outstanding(&self) -> u64 {
        self.outcomes.len() as u64 + 1
    }

    fn current_exposure(&self) -> Option<Millis> {
        self.staircase.as_ref().and_then(|s| s.current_exposure())
    }

    /// Rejects requests on finished or idle sessions; marks idle ones expired.
    fn check_live(&mut self, timeout: Duration) -> Result<()> {
        if self.completed {
            return Err(ServiceError::Terminal(format!("session {} is complete", self.session_id)));
        }
        if !self.expired && self.last_active.elapsed() > timeout {
            self.expired = true;
        }
        if self.expired {
            return Err(ServiceError::Terminal(format!("session {} expired after inactivity", self.session_id)));
        }
        Ok(())
    }

    /// Advances the session by one logged answer. Shared by live submission and replay.
    fn apply(&mut self, entry: &ResponseLogEntry, config: &Config) -> Result<SubmitOutcome> {
        let seq = self.outstanding();
        let expected = self
            .assignment
            .stimulus(seq as usize - 1)
            .map(|(_, s)| s)
            .ok_or_else(|| ServiceError::Terminal(format!("session {} has no stimulus {seq}", self.session_id)))?;
        if entry.seq != seq || entry.judgment.image_id != expected.image_id || entry.judgment.truth != expected.truth {
            return Err(ServiceError::Corrupt {
                offset: 0,
                line: 0,
                reason: format!("entry {} of session {} does not match its assignment", entry.seq, self.session_id),
            });
        }
        if let Some(stair) = &mut self.staircase {
            if entry.judgment.exposure_ms != stair.current_exposure() {
                return Err(ServiceError::Corrupt {
                    offset: 0,
                    line: 0,
                    reason: format!("entry {} of session {} has the wrong exposure", entry.seq, self.session_id),
                });
            }
            stair.record(entry.judgment.correct)?;
        }
        self.correct += u64::from(entry.judgment.correct);
        self.completed = self.outcomes.len() + 1 == self.assignment.len();
        let bonus = match self.mode {
            SessionMode::Qualification => 0,
            _ => self.correct * config.payment.bonus_cents_per_correct,
        };
        let outcome = SubmitOutcome {
            seq,
            correct: entry.judgment.correct,
            running_bonus_cents: bonus,
            running_bonus_usd: usd(bonus),
            next_exposure_ms: self.current_exposure(),
            completed: self.completed,
            timing_flagged: entry.timing_flagged,
            qualification: None,
        };
        self.outcomes.push(outcome.clone());
        self.last_active = Instant::now();
        Ok(outcome)
    }
}

struct RunState {
    run_id: String,
    dir: PathBuf,
    manifest: Option<RunManifest>,
    sessions: BTreeMap<String, SessionState>,
    log: LogWriter,
    entries: Vec<ResponseLogEntry>,
}

impl RunState {
    fn save_manifest(&self) -> Result<()> {
        if let Some(m) = &self.manifest {
            write_atomic(&self.dir.join("manifest.json"), &serde_json::to_vec_pretty(m)?)?;
        }
        Ok(())
    }

    fn completed_sessions(&self) -> usize {
        self.sessions.values().filter(|s| s.completed).count()
    }

    fn has_evaluator(&self, evaluator_id: &str) -> bool {
        self.sessions.values().any(|s| s.evaluator_id == evaluator_id)
    }
}

pub struct Store {
    config: Config,
    runs: RwLock<HashMap<String, Arc<Mutex<RunState>>>>,
    /// session id to run id
    session_index: RwLock<HashMap<String, String>>,
    /// evaluator id to the one run they joined
    enrolled: Mutex<HashMap<String, String>>,
    pools: RwLock<HashMap<String, Arc<ImagePool>>>,
    qualification: Arc<Mutex<RunState>>,
    qualified: RwLock<HashMap<String, QualificationResult>>,
    metrics: RwLock<MetricTable>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Store {
    /// Opens (or initializes) the data directory and rebuilds all state from it.
    pub fn open(config: Config) -> Result<Self> {
        config.validate()?;
        let root = config.data_dir.clone();
        for sub in ["pools", "runs", QUALIFICATION_RUN] {
            fs::create_dir_all(root.join(sub))?;
        }
        let qdir = root.join(QUALIFICATION_RUN);
        let metrics_path = root.join("metrics.csv");
        let metrics = if metrics_path.exists() {
            MetricTable::from_csv(File::open(&metrics_path)?)?
        } else {
            MetricTable::default()
        };
        let store = Self {
            qualification: Arc::new(Mutex::new(RunState {
                run_id: QUALIFICATION_RUN.into(),
                log: LogWriter::open(&qdir.join("responses.jsonl"))?,
                dir: qdir,
                manifest: None,
                sessions: BTreeMap::new(),
                entries: Vec::new(),
            })),
            config,
            runs: RwLock::new(HashMap::new()),
            session_index: RwLock::new(HashMap::new()),
            enrolled: Mutex::new(HashMap::new()),
            pools: RwLock::new(HashMap::new()),
            qualified: RwLock::new(HashMap::new()),
            metrics: RwLock::new(metrics),
        };
        store.recover()?;
        Ok(store)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    fn scoring_params(&self) -> ScoringParams {
        ScoringParams {
            staircase: self.config.staircase,
            iterations: self.config.bootstrap_iterations,
            resample_size: self.config.bootstrap_resample_size,
        }
    }

    fn recover(&self) -> Result<()> {
        // Qualification first: main-task assignments exclude each evaluator's qualification images.
        {
            let mut q = lock(&self.qualification);
            let events: Vec<SessionEvent> = read_json_lines(&q.dir.join("sessions.jsonl"))?;
            for ev in events {
                let assignment = self.qualification_assignment(&ev.evaluator_id)?;
                self.index_session(&ev.session_id, QUALIFICATION_RUN);
                q.sessions.insert(ev.session_id.clone(), SessionState::new(&ev, assignment, &self.config)?);
            }
            let log = read_log(&q.dir.join("responses.jsonl"))?;
            for entry in log.entries {
                self.replay_entry(&mut q, entry)?;
            }
        }
        let mut dirs: Vec<PathBuf> = fs::read_dir(self.config.data_dir.join("runs"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("manifest.json").exists())
            .collect();
        dirs.sort();
        for dir in dirs {
            let manifest: RunManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
            let mut state = RunState {
                run_id: manifest.run_id.clone(),
                log: LogWriter::open(&dir.join("responses.jsonl"))?,
                dir: dir.clone(),
                manifest: Some(manifest.clone()),
                sessions: BTreeMap::new(),
                entries: Vec::new(),
            };
            let events: Vec<SessionEvent> = read_json_lines(&dir.join("sessions.jsonl"))?;
            for ev in events {
                let assignment = self.main_assignment(&manifest, &ev.evaluator_id)?;
                self.index_session(&ev.session_id, &manifest.run_id);
                lock(&self.enrolled).insert(ev.evaluator_id.clone(), manifest.run_id.clone());
                state.sessions.insert(ev.session_id.clone(), SessionState::new(&ev, assignment, &self.config)?);
            }
            for entry in read_log(&dir.join("responses.jsonl"))?.entries {
                self.replay_entry(&mut state, entry)?;
            }
            tracing::info!(run = %manifest.run_id, sessions = state.sessions.len(), responses = state.entries.len(), "recovered run");
            self.runs.write().unwrap().insert(manifest.run_id.clone(), Arc::new(Mutex::new(state)));
        }
        Ok(())
    }

    fn replay_entry(&self, run: &mut RunState, entry: ResponseLogEntry) -> Result<()> {
        let session = run.sessions.get_mut(&entry.session_id).ok_or_else(|| ServiceError::Corrupt {
            offset: 0,
            line: run.entries.len() + 1,
            reason: format!("response for unknown session {}", entry.session_id),
        })?;
        session.apply(&entry, &self.config)?;
        if session.completed && session.mode == SessionMode::Qualification {
            self.grade(session)?;
        }
        run.entries.push(entry);
        Ok(())
    }

    fn index_session(&self, session_id: &str, run_id: &str) {
        self.session_index.write().unwrap().insert(session_id.to_string(), run_id.to_string());
    }

    fn run_state(&self, run_id: &str) -> Result<Arc<Mutex<RunState>>> {
        if run_id == QUALIFICATION_RUN {
            return Ok(self.qualification.clone());
        }
        self.runs.read().unwrap().get(run_id).cloned().ok_or_else(|| ServiceError::NotFound(format!("run {run_id}")))
    }

    fn session_run(&self, session_id: &str) -> Result<Arc<Mutex<RunState>>> {
        let run_id = self
            .session_index
            .read()
            .unwrap()
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))?;
        self.run_state(&run_id)
    }

    fn pool_path(&self, pool_id: &str) -> PathBuf {
        self.config.data_dir.join("pools").join(format!("{pool_id}.jsonl"))
    }

    /// Writes a pool manifest into the data directory.
    pub fn install_pool(&self, pool: &ImagePool) -> Result<PathBuf> {
        let path = self.pool_path(&pool.pool_id);
        pool.save(&path)?;
        self.pools.write().unwrap().insert(pool.pool_id.clone(), Arc::new(pool.clone()));
        Ok(path)
    }

    pub fn pool(&self, pool_id: &str) -> Result<Arc<ImagePool>> {
        if let Some(p) = self.pools.read().unwrap().get(pool_id) {
            return Ok(p.clone());
        }
        let path = self.pool_path(pool_id);
        if !path.exists() {
            return Err(ServiceError::NotFound(format!("pool {pool_id}")));
        }
        let pool = Arc::new(ImagePool::load(pool_id, &path)?);
        self.pools.write().unwrap().insert(pool_id.to_string(), pool.clone());
        Ok(pool)
    }

    fn qualification_pools(&self) -> Result<Vec<Arc<ImagePool>>> {
        let ids: Vec<String> = if self.config.qualification_pools.is_empty() {
            let mut ids: Vec<String> = fs::read_dir(self.config.data_dir.join("pools"))?
                .filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".jsonl")).map(str::to_string))
                .collect();
            ids.sort();
            ids
        } else {
            self.config.qualification_pools.clone()
        };
        ids.iter().map(|id| self.pool(id)).collect()
    }

    fn qualification_assignment(&self, evaluator_id: &str) -> Result<TaskAssignment> {
        let pools: Vec<ImagePool> = self.qualification_pools()?.iter().map(|p| (**p).clone()).collect();
        Ok(build_qualification(
            &pools,
            evaluator_id,
            self.config.qualification_seed,
            self.config.allow_single_model_qualification,
        )?)
    }

    fn main_assignment(&self, manifest: &RunManifest, evaluator_id: &str) -> Result<TaskAssignment> {
        let pool = self.pool(&manifest.pool_id)?;
        let exclude = {
            let q = lock(&self.qualification);
            q.sessions
                .get(&session_id_for(QUALIFICATION_RUN, evaluator_id))
                .map(|s| s.assignment.iter().map(|st| st.image_id.clone()).collect())
                .unwrap_or_default()
        };
        let mode = manifest.session_mode();
        let shape = TaskShape::for_mode(mode, &self.config.staircase);
        Ok(assign_task(&pool, &manifest.run_id, manifest.seed, evaluator_id, mode, &shape, &exclude)?)
    }

    pub fn create_run(&self, draft: RunDraft) -> Result<RunManifest> {
        let manifest = draft.into_manifest(now_ms())?;
        let pool = self.pool(&manifest.pool_id)?;
        let shape = TaskShape::for_mode(manifest.session_mode(), &self.config.staircase);
        let (need_real, need_fake) = (shape.reals_per_block() * shape.blocks, shape.fakes_per_block * shape.blocks);
        if pool.real_images.len() < need_real || pool.fake_images.len() < need_fake {
            return Err(hype_core::HypeError::Capacity {
                what: format!("images in pool {} for one {} task", pool.pool_id, manifest.mode),
                needed: need_real + need_fake,
                available: pool.real_images.len().min(pool.fake_images.len()) * 2,
            }
            .into());
        }
        let mut runs = self.runs.write().unwrap();
        let dir = self.config.data_dir.join("runs").join(&manifest.run_id);
        if runs.contains_key(&manifest.run_id) || dir.exists() || manifest.run_id == QUALIFICATION_RUN {
            return Err(ServiceError::Conflict(format!("run {} already exists", manifest.run_id)));
        }
        fs::create_dir_all(&dir)?;
        let state = RunState {
            run_id: manifest.run_id.clone(),
            log: LogWriter::open(&dir.join("responses.jsonl"))?,
            dir,
            manifest: Some(manifest.clone()),
            sessions: BTreeMap::new(),
            entries: Vec::new(),
        };
        state.save_manifest()?;
        runs.insert(manifest.run_id.clone(), Arc::new(Mutex::new(state)));
        tracing::info!(run = %manifest.run_id, model = %manifest.model_id, mode = %manifest.mode, "created run");
        Ok(manifest)
    }

    pub fn manifest(&self, run_id: &str) -> Result<RunManifest> {
        let run = self.run_state(run_id)?;
        let r = lock(&run);
        r.manifest.clone().ok_or_else(|| ServiceError::NotFound(format!("run {run_id}")))
    }

    pub fn run_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.runs.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn is_qualified(&self, evaluator_id: &str) -> bool {
        self.qualified.read().unwrap().get(evaluator_id).is_some_and(|r| r.passed)
    }

    /// Opens the evaluator's session on a run, enforcing qualification and one session per run.
    pub fn open_session(&self, run_id: &str, evaluator_id: &str) -> Result<SessionCreated> {
        if evaluator_id.is_empty() {
            return Err(ServiceError::BadRequest("evaluator_id is required".into()));
        }
        if run_id == QUALIFICATION_RUN {
            return self.open_qualification(evaluator_id);
        }
        let run = self.run_state(run_id)?;
        let manifest = self.manifest(run_id)?;
        if manifest.status == RunStatus::Complete {
            return Err(ServiceError::Terminal(format!(
                "run {run_id} has all {} evaluators",
                manifest.target_evaluators
            )));
        }
        if self.config.require_qualification && !self.is_qualified(evaluator_id) {
            return Err(hype_core::HypeError::Unqualified(evaluator_id.to_string()).into());
        }
        let assignment = self.main_assignment(&manifest, evaluator_id)?;
        // Held across the check and the insert so two runs cannot both admit the evaluator.
        let mut enrolled = lock(&self.enrolled);
        if let Some(joined) = enrolled.get(evaluator_id) {
            return Err(
                hype_core::HypeError::BetweenSubjects { evaluator: evaluator_id.into(), run: joined.clone() }.into()
            );
        }
        let mut r = lock(&run);
        let created = self.start_session(&mut r, evaluator_id, manifest.session_mode(), assignment)?;
        enrolled.insert(evaluator_id.to_string(), run_id.to_string());
        drop(enrolled);
        if let Some(m) = &mut r.manifest {
            if m.advance(RunStatus::Collecting) {
                r.save_manifest()?;
            }
        }
        Ok(created)
    }

    fn open_qualification(&self, evaluator_id: &str) -> Result<SessionCreated> {
        let assignment = self.qualification_assignment(evaluator_id)?;
        let mut q = lock(&self.qualification);
        if q.has_evaluator(evaluator_id) {
            return Err(ServiceError::Conflict(format!(
                "evaluator {evaluator_id} already has a qualification session"
            )));
        }
        self.start_session(&mut q, evaluator_id, SessionMode::Qualification, assignment)
    }

    fn start_session(
        &self,
        run: &mut RunState,
        evaluator_id: &str,
        mode: SessionMode,
        mut assignment: TaskAssignment,
    ) -> Result<SessionCreated> {
        if mode == SessionMode::Qualification {
            assignment.disclosure =
                hype_core::pool::disclosure_text(mode, &TaskShape::UNTIMED, self.config.qualification.threshold);
        }
        let event = SessionEvent {
            session_id: session_id_for(&run.run_id, evaluator_id),
            run_id: run.run_id.clone(),
            evaluator_id: evaluator_id.to_string(),
            mode,
            created_at: now_ms(),
        };
        let session = SessionState::new(&event, assignment, &self.config)?;
        append_json_line(&run.dir.join("sessions.jsonl"), &event)?;
        let created = SessionCreated {
            session_id: event.session_id.clone(),
            run_id: event.run_id.clone(),
            evaluator_id: event.evaluator_id.clone(),
            mode,
            total_stimuli: session.assignment.len(),
            blocks: session.assignment.blocks.len(),
            disclosure: session.assignment.disclosure.clone(),
            next_seq: 1,
        };
        self.index_session(&event.session_id, &run.run_id);
        run.sessions.insert(event.session_id, session);
        Ok(created)
    }

    pub fn next_stimulus(&self, session_id: &str, seq: Option<u64>) -> Result<StimulusDescriptor> {
        let run = self.session_run(session_id)?;
        let mut r = lock(&run);
        let timeout = Duration::from_secs(self.config.session_idle_timeout_secs);
        let s =
            r.sessions.get_mut(session_id).ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))?;
        s.check_live(timeout)?;
        let outstanding = s.outstanding();
        if let Some(got) = seq {
            if got != outstanding {
                return Err(ServiceError::Sequence { expected: outstanding, got });
            }
        }
        let index = outstanding as usize - 1;
        let (block, _) = s
            .assignment
            .stimulus(index)
            .ok_or_else(|| ServiceError::Terminal(format!("session {session_id} has no more stimuli")))?;
        let per_block = s.assignment.blocks[0].len();
        let timed = s.mode == SessionMode::Time;
        let base = format!("/sessions/{session_id}/stimuli/{outstanding}");
        s.last_active = Instant::now();
        Ok(StimulusDescriptor {
            session_id: session_id.to_string(),
            seq: outstanding,
            mode: s.mode,
            block,
            trial_in_block: index % per_block,
            total: s.assignment.len(),
            image_uri: format!("{base}/image"),
            exposure_ms: s.current_exposure(),
            mask_uris: if timed {
                (0..MASKS_PER_STIMULUS).map(|i| format!("{base}/masks/{i}")).collect()
            } else {
                Vec::new()
            },
            mask_ms: timed.then_some(self.config.mask_ms),
            countdown: timed.then(|| Countdown {
                labels: vec!["3".into(), "2".into(), "1".into()],
                step_ms: self.config.countdown_step_ms,
            }),
        })
    }

    pub fn submit_response(&self, session_id: &str, req: SubmitRequest) -> Result<SubmitOutcome> {
        let run = self.session_run(session_id)?;
        let mut guard = lock(&run);
        let r = &mut *guard;
        let timeout = Duration::from_secs(self.config.session_idle_timeout_secs);
        let s =
            r.sessions.get_mut(session_id).ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))?;
        if req.seq >= 1 && req.seq <= s.outcomes.len() as u64 {
            return Ok(s.outcomes[req.seq as usize - 1].clone());
        }
        s.check_live(timeout)?;
        if req.seq != s.outstanding() {
            return Err(ServiceError::Sequence { expected: s.outstanding(), got: req.seq });
        }
        if let Some(m) = req.measured_exposure_ms {
            if !m.is_finite() || m < 0.0 {
                return Err(ServiceError::BadRequest("measured_exposure_ms must be a non-negative number".into()));
            }
        }
        let (_, stimulus) = s.assignment.stimulus(req.seq as usize - 1).expect("outstanding stimulus exists");
        let mut judgment = Judgment::new(&s.evaluator_id, &stimulus.image_id, stimulus.truth, req.answer).at(now_ms());
        let commanded = s.current_exposure();
        if let Some(e) = commanded {
            judgment = judgment.with_exposure(e);
        }
        judgment.measured_exposure_ms = req.measured_exposure_ms;
        let timing_flagged = match (commanded, req.measured_exposure_ms) {
            (Some(c), Some(m)) => (m - f64::from(c)).abs() > self.config.timing_tolerance_ms(),
            _ => false,
        };
        let entry = ResponseLogEntry {
            seq: req.seq,
            session_id: session_id.to_string(),
            run_id: s.run_id.clone(),
            mode: s.mode,
            judgment,
            received_at: now_ms(),
            timing_flagged,
        };
        // Durable before acknowledged.
        r.log.append(&entry)?;
        let mut outcome = s.apply(&entry, &self.config)?;
        if s.completed && s.mode == SessionMode::Qualification {
            outcome.qualification = Some(self.grade(s)?);
            s.outcomes.last_mut().expect("just pushed").qualification = outcome.qualification.clone();
        }
        r.entries.push(entry);
        let completed = r.completed_sessions();
        if let Some(m) = &mut r.manifest {
            if completed >= m.target_evaluators && m.advance(RunStatus::Complete) {
                tracing::info!(run = %m.run_id, "run reached its evaluator target");
                r.save_manifest()?;
            }
        }
        Ok(outcome)
    }

    fn grade(&self, session: &mut SessionState) -> Result<QualificationResult> {
        let mut policy = self.config.qualification;
        policy.expected_judgments = session.assignment.len();
        let judgments = self.session_judgments(session);
        let result = grade_qualification(&judgments, &policy)?;
        self.qualified.write().unwrap().insert(session.evaluator_id.clone(), result.clone());
        if let Some(o) = session.outcomes.last_mut() {
            o.qualification = Some(result.clone());
        }
        Ok(result)
    }

    /// Rebuilds a qualification session's judgments from its assignment and outcomes.
    fn session_judgments(&self, session: &SessionState) -> Vec<Judgment> {
        session
            .assignment
            .iter()
            .zip(&session.outcomes)
            .map(|(st, o)| {
                let answer = if o.correct { st.truth } else { st.truth.flipped() };
                Judgment::new(&session.evaluator_id, &st.image_id, st.truth, answer)
            })
            .collect()
    }

    pub fn qualification_result(&self, evaluator_id: &str) -> Option<QualificationResult> {
        self.qualified.read().unwrap().get(evaluator_id).cloned()
    }

    /// Base pay for a finished qualification plus the bonus over all main-task answers.
    pub fn payment(&self, evaluator_id: &str) -> PaymentStatement {
        let qualified_done = self.qualified.read().unwrap().contains_key(evaluator_id);
        let mut judgments = Vec::new();
        let runs: Vec<_> = self.runs.read().unwrap().values().cloned().collect();
        for run in runs {
            let r = lock(&run);
            judgments.extend(
                r.entries.iter().filter(|e| e.judgment.evaluator_id == evaluator_id).map(|e| e.judgment.clone()),
            );
        }
        compute_payment(evaluator_id, qualified_done, &judgments, &self.config.payment)
    }

    pub fn scored_run(&self, run_id: &str) -> Result<ScoredRun> {
        let run = self.run_state(run_id)?;
        let r = lock(&run);
        let manifest = r.manifest.clone().ok_or_else(|| ServiceError::NotFound(format!("run {run_id}")))?;
        fold_run(&manifest, &r.entries, &self.scoring_params())
    }

    /// The run's report in its canonical JSON form.
    pub fn score_json(&self, run_id: &str) -> Result<String> {
        Ok(report_json(&self.scored_run(run_id)?.report))
    }

    pub fn compare(&self, run_ids: &[String]) -> Result<CompareReport> {
        let runs = run_ids.iter().map(|id| self.scored_run(id)).collect::<Result<Vec<_>>>()?;
        let metrics = self.metrics.read().unwrap().clone();
        compare_models(&runs, &metrics)
    }

    /// Merges CSV metric rows into the table and persists it.
    pub fn ingest_metrics(&self, csv_text: &str) -> Result<usize> {
        let incoming = MetricTable::from_csv(csv_text.as_bytes())?;
        let n = incoming.rows().len();
        let mut m = self.metrics.write().unwrap();
        m.merge(incoming);
        write_atomic(&self.config.data_dir.join("metrics.csv"), m.to_csv()?.as_bytes())?;
        Ok(n)
    }

    pub fn metrics(&self) -> MetricTable {
        self.metrics.read().unwrap().clone()
    }

    fn stimulus_record(&self, session_id: &str, seq: u64) -> Result<(ImageRecord, u64)> {
        let run = self.session_run(session_id)?;
        let (image_id, run_id) = {
            let r = lock(&run);
            let s =
                r.sessions.get(session_id).ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))?;
            // Only the outstanding stimulus and those already answered are served.
            if seq == 0 || seq > s.outstanding() {
                return Err(ServiceError::Sequence { expected: s.outstanding(), got: seq });
            }
            let (_, st) = s
                .assignment
                .stimulus(seq as usize - 1)
                .ok_or_else(|| ServiceError::NotFound(format!("stimulus {seq}")))?;
            (st.image_id.clone(), s.run_id.clone())
        };
        let (pools, seed) = if run_id == QUALIFICATION_RUN {
            (self.qualification_pools()?, self.config.qualification_seed)
        } else {
            let m = self.manifest(&run_id)?;
            (vec![self.pool(&m.pool_id)?], m.seed)
        };
        pools
            .iter()
            .find_map(|p| p.get(&image_id).cloned())
            .map(|r| (r, seed))
            .ok_or_else(|| ServiceError::NotFound(format!("image for stimulus {seq}")))
    }

    pub fn stimulus_image(&self, session_id: &str, seq: u64) -> Result<Vec<u8>> {
        let (record, _) = self.stimulus_record(session_id, seq)?;
        let bytes = read_uri(&record.uri)?;
        if !record.checksum.is_empty() && !record.verify(&bytes) {
            return Err(ServiceError::Conflict(format!("checksum mismatch for stimulus {seq}")));
        }
        Ok(bytes)
    }

    pub fn stimulus_mask(&self, session_id: &str, seq: u64, index: usize) -> Result<Vec<u8>> {
        if index >= MASKS_PER_STIMULUS {
            return Err(ServiceError::NotFound(format!("mask {index}")));
        }
        let (record, seed) = self.stimulus_record(session_id, seq)?;
        let masks =
            generate_masks(&record, self.config.mask_generator, derive_seed(seed, &["mask", &record.image_id]))?;
        Ok(masks.masks[index].encode_png()?)
    }

    /// Path of a run's response log, for offline replay.
    pub fn log_path(&self, run_id: &str) -> PathBuf {
        self.config.data_dir.join("runs").join(run_id).join("responses.jsonl")
    }
}
