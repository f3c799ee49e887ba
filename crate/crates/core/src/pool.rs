//! Image pools, per-evaluator task assignment, qualification and payment.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HypeError, Result};
use crate::scoring::{Judgment, Label, SessionMode};
use crate::staircase::StaircaseConfig;

/// Images sampled per source when a pool is built.
pub const DEFAULT_POOL_SIZE: usize = 5000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub source: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<String>,
    pub uri: String,
    /// Lowercase hex SHA-256 of the image bytes.
    pub checksum: String,
}

impl ImageRecord {
    pub fn verify(&self, bytes: &[u8]) -> bool {
        sha256_hex(bytes) == self.checksum
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(HypeError::Input("image record without an id".into()));
        }
        if self.source == Label::Fake && self.model_id.is_none() {
            return Err(HypeError::Input(format!("generated image {} carries no model_id", self.image_id)));
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable 64-bit seed derived from a base seed and a list of identifiers.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Reads a line-delimited JSON manifest of image records.
pub fn read_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImageRecord =
            serde_json::from_str(&line).map_err(|e| HypeError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ImageRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| HypeError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePool {
    pub pool_id: String,
    pub real_images: Vec<ImageRecord>,
    pub fake_images: Vec<ImageRecord>,
    pub sampling_seed: u64,
}

impl ImagePool {
    /// Assembles a pool from already-sampled records, checking the pool invariants.
    pub fn from_records(pool_id: &str, records: Vec<ImageRecord>, sampling_seed: u64) -> Result<Self> {
        let mut seen = HashSet::new();
        let (mut real_images, mut fake_images) = (Vec::new(), Vec::new());
        for r in records {
            r.validate()?;
            if !seen.insert(r.image_id.clone()) {
                return Err(HypeError::Input(format!("duplicate image id {}", r.image_id)));
            }
            match r.source {
                Label::Real => real_images.push(r),
                Label::Fake => fake_images.push(r),
            }
        }
        Ok(Self { pool_id: pool_id.to_string(), real_images, fake_images, sampling_seed })
    }

    pub fn load(pool_id: &str, path: &Path) -> Result<Self> {
        Self::from_records(pool_id, read_manifest(path)?, 0)
    }

    pub fn records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.real_images.iter().chain(&self.fake_images)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let all: Vec<ImageRecord> = self.records().cloned().collect();
        write_manifest(path, &all)
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records().find(|r| r.image_id == image_id)
    }

    /// Number of images per class label, for conditional pools.
    pub fn class_composition(&self) -> BTreeMap<String, (usize, usize)> {
        let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for r in self.records() {
            if let Some(c) = &r.class_label {
                let e = out.entry(c.clone()).or_default();
                match r.source {
                    Label::Real => e.0 += 1,
                    Label::Fake => e.1 += 1,
                }
            }
        }
        out
    }
}

fn sample_without_replacement(
    source: &[ImageRecord],
    k: usize,
    rng: &mut ChaCha8Rng,
    what: &str,
) -> Result<Vec<ImageRecord>> {
    if source.len() < k {
        return Err(HypeError::Capacity { what: what.into(), needed: k, available: source.len() });
    }
    let mut picked = index::sample(rng, source.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| source[i].clone()).collect())
}

/// Samples `k` real and `k` generated images uniformly without replacement.
pub fn build_pool(
    pool_id: &str,
    real_source: &[ImageRecord],
    fake_source: &[ImageRecord],
    k: usize,
    seed: u64,
) -> Result<ImagePool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reals = sample_without_replacement(real_source, k, &mut rng, "real images")?;
    let fakes = sample_without_replacement(fake_source, k, &mut rng, "generated images")?;
    let mut pool = ImagePool::from_records(pool_id, reals.into_iter().chain(fakes).collect(), seed)?;
    pool.sampling_seed = seed;
    Ok(pool)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub image_id: String,
    pub truth: Label,
}

/// Per-mode size of an assignment: `blocks` blocks of `per_block` stimuli,
/// `fakes_per_block` of them generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskShape {
    pub blocks: usize,
    pub per_block: usize,
    pub fakes_per_block: usize,
}

impl TaskShape {
    pub const UNTIMED: TaskShape = TaskShape { blocks: 1, per_block: 100, fakes_per_block: 50 };

    pub fn for_mode(mode: SessionMode, staircase: &StaircaseConfig) -> Self {
        match mode {
            SessionMode::Time => TaskShape {
                blocks: staircase.blocks_per_session,
                per_block: staircase.trials_per_block,
                fakes_per_block: staircase.fakes_per_block(),
            },
            SessionMode::Infinity | SessionMode::Qualification => Self::UNTIMED,
        }
    }

    pub fn total(&self) -> usize {
        self.blocks * self.per_block
    }

    pub fn reals_per_block(&self) -> usize {
        self.per_block - self.fakes_per_block
    }
}

/// Ordered stimuli for one evaluator's session. The truth labels stay on the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAssignment {
    pub run_id: String,
    pub evaluator_id: String,
    pub session_mode: SessionMode,
    pub blocks: Vec<Vec<Stimulus>>,
    /// Composition notice the client shows before the first trial.
    pub disclosure: String,
}

impl TaskAssignment {
    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stimulus at 0-based position `index` across all blocks, with its block index.
    pub fn stimulus(&self, index: usize) -> Option<(usize, &Stimulus)> {
        let mut rest = index;
        for (b, block) in self.blocks.iter().enumerate() {
            if rest < block.len() {
                return Some((b, &block[rest]));
            }
            rest -= block.len();
        }
        None
    }

    pub fn iter(&self) -> impl Iterator<Item = &Stimulus> {
        self.blocks.iter().flatten()
    }
}

pub fn disclosure_text(mode: SessionMode, shape: &TaskShape, qualification_threshold: f64) -> String {
    let reals = shape.reals_per_block();
    let fakes = shape.fakes_per_block;
    match mode {
        SessionMode::Infinity => format!(
            "{reals} real / {fakes} fake: this task shows {} images, {reals} real and {fakes} generated.",
            shape.total()
        ),
        SessionMode::Qualification => format!(
            "{reals} real / {fakes} fake: classify at least {:.0}% of the real images and at least {:.0}% of the generated images correctly to qualify.",
            qualification_threshold * 100.0,
            qualification_threshold * 100.0
        ),
        SessionMode::Time => format!(
            "{} blocks of {} images; each block is {reals} real / {fakes} fake.",
            shape.blocks, shape.per_block
        ),
    }
}

fn draw_blocks(
    reals: &[&ImageRecord],
    fakes: &[&ImageRecord],
    shape: &TaskShape,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Stimulus>>> {
    let need_real = shape.reals_per_block() * shape.blocks;
    let need_fake = shape.fakes_per_block * shape.blocks;
    if reals.len() < need_real {
        return Err(HypeError::Capacity { what: "real images".into(), needed: need_real, available: reals.len() });
    }
    if fakes.len() < need_fake {
        return Err(HypeError::Capacity { what: "generated images".into(), needed: need_fake, available: fakes.len() });
    }
    let real_pick = index::sample(rng, reals.len(), need_real).into_vec();
    let fake_pick = index::sample(rng, fakes.len(), need_fake).into_vec();
    let mut blocks = Vec::with_capacity(shape.blocks);
    for b in 0..shape.blocks {
        let r = shape.reals_per_block();
        let f = shape.fakes_per_block;
        let mut block: Vec<Stimulus> = real_pick[b * r..(b + 1) * r]
            .iter()
            .map(|&i| Stimulus { image_id: reals[i].image_id.clone(), truth: Label::Real })
            .chain(
                fake_pick[b * f..(b + 1) * f]
                    .iter()
                    .map(|&i| Stimulus { image_id: fakes[i].image_id.clone(), truth: Label::Fake }),
            )
            .collect();
        block.shuffle(rng);
        blocks.push(block);
    }
    Ok(blocks)
}

/// Draws a balanced, shuffled assignment from `pool`, deterministic in
/// `(run_seed, run_id, evaluator_id)`. Images in `exclude` are never drawn.
pub fn assign_task(
    pool: &ImagePool,
    run_id: &str,
    run_seed: u64,
    evaluator_id: &str,
    mode: SessionMode,
    shape: &TaskShape,
    exclude: &HashSet<String>,
) -> Result<TaskAssignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run_seed, &[run_id, evaluator_id]));
    let keep = |r: &&ImageRecord| !exclude.contains(&r.image_id);
    let reals: Vec<&ImageRecord> = pool.real_images.iter().filter(keep).collect();
    let fakes: Vec<&ImageRecord> = pool.fake_images.iter().filter(keep).collect();
    Ok(TaskAssignment {
        run_id: run_id.to_string(),
        evaluator_id: evaluator_id.to_string(),
        session_mode: mode,
        blocks: draw_blocks(&reals, &fakes, shape, &mut rng)?,
        disclosure: disclosure_text(mode, shape, QualificationPolicy::default().threshold),
    })
}

/// Hands out assignments for one run, enforcing the run's admission rules:
/// evaluators must be qualified (when required) and may join a run only once.
#[derive(Debug, Clone)]
pub struct RunAssigner {
    pub run_id: String,
    pub run_seed: u64,
    pub mode: SessionMode,
    pub shape: TaskShape,
    pub require_qualification: bool,
    assigned: HashSet<String>,
    exclude: HashSet<String>,
}

impl RunAssigner {
    pub fn new(run_id: &str, run_seed: u64, mode: SessionMode, shape: TaskShape, require_qualification: bool) -> Self {
        Self {
            run_id: run_id.to_string(),
            run_seed,
            mode,
            shape,
            require_qualification,
            assigned: HashSet::new(),
            exclude: HashSet::new(),
        }
    }

    /// Images that must never appear in this run (e.g. qualification stimuli).
    pub fn exclude_images(&mut self, ids: impl IntoIterator<Item = String>) {
        self.exclude.extend(ids);
    }

    pub fn is_assigned(&self, evaluator_id: &str) -> bool {
        self.assigned.contains(evaluator_id)
    }

    /// Records an assignment made earlier (used when rebuilding state from disk).
    pub fn mark_assigned(&mut self, evaluator_id: &str) {
        self.assigned.insert(evaluator_id.to_string());
    }

    pub fn assign(&mut self, pool: &ImagePool, evaluator_id: &str, qualified: bool) -> Result<TaskAssignment> {
        if self.require_qualification && self.mode != SessionMode::Qualification && !qualified {
            return Err(HypeError::Unqualified(evaluator_id.to_string()));
        }
        if self.assigned.contains(evaluator_id) {
            return Err(HypeError::BetweenSubjects { evaluator: evaluator_id.to_string(), run: self.run_id.clone() });
        }
        let a = assign_task(pool, &self.run_id, self.run_seed, evaluator_id, self.mode, &self.shape, &self.exclude)?;
        self.assigned.insert(evaluator_id.to_string());
        Ok(a)
    }
}

/// Splits `total` generated images across `models` as evenly as possible; the
/// remainder goes to models picked by a seeded draw.
pub fn qualification_split(total: usize, models: usize, seed: u64) -> Vec<usize> {
    if models == 0 {
        return Vec::new();
    }
    let mut counts = vec![total / models; models];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in index::sample(&mut rng, models, total % models) {
        counts[i] += 1;
    }
    counts
}

/// Builds the 100-image qualification task: 50 reals and 50 fakes drawn
/// equally across the generators of `pools`.
pub fn build_qualification(
    pools: &[ImagePool],
    evaluator_id: &str,
    seed: u64,
    allow_single_model: bool,
) -> Result<TaskAssignment> {
    let shape = TaskShape::UNTIMED;
    let mut by_model: BTreeMap<String, Vec<&ImageRecord>> = BTreeMap::new();
    let mut reals: Vec<&ImageRecord> = Vec::new();
    let mut seen_reals = HashSet::new();
    for pool in pools {
        for r in &pool.fake_images {
            by_model.entry(r.model_id.clone().unwrap_or_default()).or_default().push(r);
        }
        for r in &pool.real_images {
            if seen_reals.insert(r.image_id.as_str()) {
                reals.push(r);
            }
        }
    }
    if by_model.is_empty() {
        return Err(HypeError::Input("qualification needs at least one generator pool".into()));
    }
    if by_model.len() < 2 && !allow_single_model {
        return Err(HypeError::Input(
            "qualification fakes come from a single model; pass allow_single_model to accept".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["qualification", evaluator_id]));
    let split = qualification_split(shape.fakes_per_block, by_model.len(), rng.random());
    let mut stimuli = Vec::with_capacity(shape.total());
    for ((model, images), want) in by_model.iter().zip(split) {
        if images.len() < want {
            return Err(HypeError::Capacity {
                what: format!("generated images from {model}"),
                needed: want,
                available: images.len(),
            });
        }
        for i in index::sample(&mut rng, images.len(), want) {
            stimuli.push(Stimulus { image_id: images[i].image_id.clone(), truth: Label::Fake });
        }
    }
    if reals.len() < shape.reals_per_block() {
        return Err(HypeError::Capacity {
            what: "real images".into(),
            needed: shape.reals_per_block(),
            available: reals.len(),
        });
    }
    for i in index::sample(&mut rng, reals.len(), shape.reals_per_block()) {
        stimuli.push(Stimulus { image_id: reals[i].image_id.clone(), truth: Label::Real });
    }
    stimuli.shuffle(&mut rng);
    Ok(TaskAssignment {
        run_id: "qualification".into(),
        evaluator_id: evaluator_id.to_string(),
        session_mode: SessionMode::Qualification,
        blocks: vec![stimuli],
        disclosure: disclosure_text(SessionMode::Qualification, &shape, QualificationPolicy::default().threshold),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualificationPolicy {
    pub threshold: f64,
    /// Require the threshold on each class separately rather than overall.
    pub per_class: bool,
    pub expected_judgments: usize,
}

impl Default for QualificationPolicy {
    fn default() -> Self {
        Self { threshold: 0.65, per_class: true, expected_judgments: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationResult {
    pub evaluator_id: String,
    pub real_accuracy: f64,
    pub fake_accuracy: f64,
    pub passed: bool,
    pub threshold: f64,
}

pub fn grade_qualification(judgments: &[Judgment], policy: &QualificationPolicy) -> Result<QualificationResult> {
    if judgments.len() != policy.expected_judgments {
        return Err(HypeError::State(format!(
            "qualification session has {} of {} judgments",
            judgments.len(),
            policy.expected_judgments
        )));
    }
    let evaluator_id = judgments[0].evaluator_id.clone();
    let count = |label: Label| {
        let of_class: Vec<&Judgment> = judgments.iter().filter(|j| j.truth == label).collect();
        (of_class.iter().filter(|j| j.correct).count(), of_class.len())
    };
    let (real_ok, n_real) = count(Label::Real);
    let (fake_ok, n_fake) = count(Label::Fake);
    let acc = |ok: usize, n: usize| if n == 0 { 0.0 } else { ok as f64 / n as f64 };
    // Compare counts against the threshold so 65/100 is not lost to rounding.
    let meets = |ok: usize, n: usize| n > 0 && ok as f64 >= policy.threshold * n as f64 - 1e-9;
    let passed = if policy.per_class {
        meets(real_ok, n_real) && meets(fake_ok, n_fake)
    } else {
        meets(real_ok + fake_ok, n_real + n_fake)
    };
    Ok(QualificationResult {
        evaluator_id,
        real_accuracy: acc(real_ok, n_real),
        fake_accuracy: acc(fake_ok, n_fake),
        passed,
        threshold: policy.threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PaymentPolicy {
    pub base_cents: u64,
    pub bonus_cents_per_correct: u64,
}

impl Default for PaymentPolicy {
    fn default() -> Self {
        Self { base_cents: 100, bonus_cents_per_correct: 2 }
    }
}

/// Amounts in whole cents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentStatement {
    pub evaluator_id: String,
    pub base_cents: u64,
    pub bonus_cents: u64,
    pub total_cents: u64,
}

impl PaymentStatement {
    pub fn total_usd(&self) -> String {
        format!("${}.{:02}", self.total_cents / 100, self.total_cents % 100)
    }
}

/// Base pay for a completed qualification plus a bonus per correct main-task answer.
pub fn compute_payment(
    evaluator_id: &str,
    qualification_completed: bool,
    judgments: &[Judgment],
    policy: &PaymentPolicy,
) -> PaymentStatement {
    let base_cents = if qualification_completed { policy.base_cents } else { 0 };
    let correct = judgments.iter().filter(|j| j.correct).count() as u64;
    let bonus_cents = correct * policy.bonus_cents_per_correct;
    PaymentStatement {
        evaluator_id: evaluator_id.to_string(),
        base_cents,
        bonus_cents,
        total_cents: base_cents + bonus_cents,
    }
}
