//! Weighted up-down staircase over exposure time.
//!
//! Each correct answer shortens the next exposure by `step_down_on_correct`,
//! each mistake lengthens it by `step_up_on_incorrect`, clamped to
//! `[min_exposure, max_exposure]`. With the default 10/30 steps the walk has
//! zero expected drift where the evaluator is correct 75% of the time, so the
//! most frequently presented exposure of a block sits at that point.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};
use crate::scalar::Scalar;

/// Exposure durations are whole milliseconds.
pub type Millis = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaircaseConfig {
    pub start_exposure: Millis,
    pub min_exposure: Millis,
    pub max_exposure: Millis,
    pub step_down_on_correct: Millis,
    pub step_up_on_incorrect: Millis,
    pub trials_per_block: usize,
    pub blocks_per_session: usize,
    /// Fraction of each block drawn from generated images.
    pub fake_fraction: f64,
}

impl Default for StaircaseConfig {
    fn default() -> Self {
        Self {
            start_exposure: 500,
            min_exposure: 100,
            max_exposure: 1000,
            step_down_on_correct: 10,
            step_up_on_incorrect: 30,
            trials_per_block: 150,
            blocks_per_session: 3,
            fake_fraction: 0.5,
        }
    }
}

impl StaircaseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_exposure <= self.start_exposure && self.start_exposure <= self.max_exposure) {
            return Err(HypeError::Config(format!(
                "exposures must satisfy min <= start <= max, got {} / {} / {}",
                self.min_exposure, self.start_exposure, self.max_exposure
            )));
        }
        if self.step_down_on_correct == 0 || self.step_up_on_incorrect == 0 {
            return Err(HypeError::Config("staircase steps must be positive".into()));
        }
        if self.trials_per_block == 0 {
            return Err(HypeError::Config("trials_per_block must be positive".into()));
        }
        if self.blocks_per_session == 0 {
            return Err(HypeError::Config("blocks_per_session must be positive".into()));
        }
        if !(self.fake_fraction > 0.0 && self.fake_fraction < 1.0) {
            return Err(HypeError::Config(format!("fake_fraction must lie in (0, 1), got {}", self.fake_fraction)));
        }
        Ok(())
    }

    /// Number of generated images in each block; the rest are real.
    pub fn fakes_per_block(&self) -> usize {
        (self.trials_per_block as f64 * self.fake_fraction).round() as usize
    }

    /// Accuracy at which the configured steps balance: `p * down == (1 - p) * up`.
    pub fn target_accuracy(&self) -> f64 {
        let up = f64::from(self.step_up_on_incorrect);
        up / (up + f64::from(self.step_down_on_correct))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub exposure: Millis,
    pub correct: bool,
}

/// One block's walk. Values are moved through [`StaircaseState::record_judgment`]
/// rather than mutated in place, so a snapshot can be handed to another thread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaircaseState {
    pub config: StaircaseConfig,
    pub block_index: usize,
    pub trial_index: usize,
    pub current_exposure: Millis,
    pub history: Vec<Trial>,
}

/// Opens block `block_index` of a session at the start exposure.
pub fn start_block(config: StaircaseConfig, block_index: usize) -> Result<StaircaseState> {
    config.validate()?;
    if block_index >= config.blocks_per_session {
        return Err(HypeError::Input(format!(
            "block index {block_index} out of range for a {}-block session",
            config.blocks_per_session
        )));
    }
    Ok(StaircaseState {
        config,
        block_index,
        trial_index: 0,
        current_exposure: config.start_exposure,
        history: Vec::with_capacity(config.trials_per_block),
    })
}

impl StaircaseState {
    pub fn is_complete(&self) -> bool {
        self.trial_index >= self.config.trials_per_block
    }

    /// Records the answer to the stimulus shown at `current_exposure` and
    /// returns the exposure for the next trial.
    pub fn record(&mut self, correct: bool) -> Result<Millis> {
        if self.is_complete() {
            return Err(HypeError::State(format!(
                "block {} already has {} trials",
                self.block_index, self.trial_index
            )));
        }
        self.history.push(Trial { exposure: self.current_exposure, correct });
        self.trial_index += 1;
        self.current_exposure = next_exposure(&self.config, self.current_exposure, correct);
        Ok(self.current_exposure)
    }

    pub fn record_judgment(mut self, correct: bool) -> Result<Self> {
        self.record(correct)?;
        Ok(self)
    }

    /// Most frequently presented exposure of a finished block.
    pub fn block_mode(&self) -> Result<BlockResult> {
        if !self.is_complete() {
            return Err(HypeError::State(format!(
                "block {} is incomplete ({} of {} trials)",
                self.block_index, self.trial_index, self.config.trials_per_block
            )));
        }
        let exposures: Vec<Millis> = self.history.iter().map(|t| t.exposure).collect();
        let modal_exposure = modal_exposure(&exposures).expect("complete block has trials");
        let at_floor = exposures.iter().filter(|&&e| e == self.config.min_exposure).count();
        Ok(BlockResult {
            modal_exposure,
            trial_count: exposures.len(),
            floor_fraction: at_floor as f64 / exposures.len() as f64,
        })
    }
}

pub fn next_exposure(config: &StaircaseConfig, current: Millis, correct: bool) -> Millis {
    let next = if correct {
        current.saturating_sub(config.step_down_on_correct)
    } else {
        current.saturating_add(config.step_up_on_incorrect)
    };
    next.clamp(config.min_exposure, config.max_exposure)
}

/// Mode of a list of exposures; ties go to the smallest exposure.
pub fn modal_exposure(exposures: &[Millis]) -> Option<Millis> {
    let mut counts: BTreeMap<Millis, usize> = BTreeMap::new();
    for &e in exposures {
        *counts.entry(e).or_default() += 1;
    }
    // BTreeMap iterates in ascending order, so a strict `>` keeps the smallest tied value.
    let mut best: Option<(Millis, usize)> = None;
    for (e, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((e, c));
        }
    }
    best.map(|(e, _)| e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    pub modal_exposure: Millis,
    pub trial_count: usize,
    /// Fraction of the block's trials presented at the minimum exposure.
    pub floor_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionThreshold<T = f64> {
    pub evaluator_id: String,
    /// Mean of the block modal exposures, in milliseconds.
    pub threshold_ms: T,
}

pub fn session_threshold<T: Scalar>(blocks: &[BlockResult], evaluator_id: &str) -> Result<SessionThreshold<T>> {
    if blocks.is_empty() {
        return Err(HypeError::Input("session threshold needs at least one completed block".into()));
    }
    let total: u64 = blocks.iter().map(|b| u64::from(b.modal_exposure)).sum();
    // Sum is exact in integers; one division keeps the mean correctly rounded.
    let threshold_ms = T::lit(total as f64) / T::from_count(blocks.len());
    Ok(SessionThreshold { evaluator_id: evaluator_id.to_string(), threshold_ms })
}

/// All blocks of one evaluator's timed session, advanced one answer at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaircaseSession {
    config: StaircaseConfig,
    current: StaircaseState,
    finished: Vec<BlockResult>,
}

impl StaircaseSession {
    pub fn new(config: StaircaseConfig) -> Result<Self> {
        Ok(Self { current: start_block(config, 0)?, config, finished: Vec::with_capacity(config.blocks_per_session) })
    }

    pub fn config(&self) -> &StaircaseConfig {
        &self.config
    }

    pub fn is_complete(&self) -> bool {
        self.finished.len() == self.config.blocks_per_session
    }

    pub fn block_index(&self) -> usize {
        self.current.block_index
    }

    /// Exposure to command for the next stimulus; `None` once every block is done.
    pub fn current_exposure(&self) -> Option<Millis> {
        (!self.is_complete()).then_some(self.current.current_exposure)
    }

    pub fn current_block(&self) -> &StaircaseState {
        &self.current
    }

    pub fn finished_blocks(&self) -> &[BlockResult] {
        &self.finished
    }

    /// Records one answer, rolling over to a fresh block when the current one fills.
    pub fn record(&mut self, correct: bool) -> Result<()> {
        if self.is_complete() {
            return Err(HypeError::State("all blocks of the session are complete".into()));
        }
        self.current.record(correct)?;
        if self.current.is_complete() {
            self.finished.push(self.current.block_mode()?);
            if !self.is_complete() {
                self.current = start_block(self.config, self.finished.len())?;
            }
        }
        Ok(())
    }

    pub fn threshold<T: Scalar>(&self, evaluator_id: &str) -> Result<SessionThreshold<T>> {
        if !self.is_complete() {
            return Err(HypeError::State(format!(
                "session has {} of {} blocks",
                self.finished.len(),
                self.config.blocks_per_session
            )));
        }
        session_threshold(&self.finished, evaluator_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> StaircaseConfig {
        StaircaseConfig::default()
    }

    fn run(config: StaircaseConfig, answers: &[bool]) -> StaircaseState {
        answers.iter().fold(start_block(config, 0).unwrap(), |s, &c| s.record_judgment(c).unwrap())
    }

    #[test]
    fn default_block_starts_at_500() {
        let s = start_block(cfg(), 0).unwrap();
        assert_eq!(s.current_exposure, 500);
        assert_eq!(s.trial_index, 0);
        assert!(s.history.is_empty());
    }

    #[test]
    fn collapsed_range_is_a_fixed_staircase() {
        let c = StaircaseConfig { start_exposure: 100, min_exposure: 100, max_exposure: 100, ..cfg() };
        let s = run(c, &[true, false, false, true]);
        assert_eq!(s.current_exposure, 100);
        assert!(s.history.iter().all(|t| t.exposure == 100));
    }

    #[test]
    fn block_index_out_of_range() {
        assert!(matches!(start_block(cfg(), 3), Err(HypeError::Input(_))));
        assert!(start_block(cfg(), 2).is_ok());
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            StaircaseConfig { start_exposure: 50, ..cfg() },
            StaircaseConfig { start_exposure: 1200, ..cfg() },
            StaircaseConfig { step_down_on_correct: 0, ..cfg() },
            StaircaseConfig { step_up_on_incorrect: 0, ..cfg() },
            StaircaseConfig { trials_per_block: 0, ..cfg() },
            StaircaseConfig { fake_fraction: 0.0, ..cfg() },
            StaircaseConfig { fake_fraction: 1.0, ..cfg() },
        ];
        for c in bad {
            assert!(matches!(start_block(c, 0), Err(HypeError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn single_steps() {
        assert_eq!(run(cfg(), &[true]).current_exposure, 490);
        let s = run(cfg(), &[true, false]);
        let shown: Vec<_> = s.history.iter().map(|t| t.exposure).collect();
        assert_eq!(shown, vec![500, 490]);
        assert_eq!(s.current_exposure, 520);
    }

    #[test]
    fn clamps_at_bounds() {
        let low = StaircaseState { current_exposure: 100, ..start_block(cfg(), 0).unwrap() };
        assert_eq!(low.record_judgment(true).unwrap().current_exposure, 100);
        let high = StaircaseState { current_exposure: 1000, ..start_block(cfg(), 0).unwrap() };
        assert_eq!(high.record_judgment(false).unwrap().current_exposure, 1000);
    }

    #[test]
    fn full_block_rejects_more_judgments() {
        let s = run(cfg(), &[true; 150]);
        assert!(matches!(s.record_judgment(true), Err(HypeError::State(_))));
    }

    #[test]
    fn mode_requires_complete_block() {
        assert!(matches!(run(cfg(), &[true; 10]).block_mode(), Err(HypeError::State(_))));
    }

    #[test]
    fn mode_unique_and_tied() {
        assert_eq!(modal_exposure(&[490, 500, 490, 500, 490]), Some(490));
        assert_eq!(modal_exposure(&[510, 480, 510, 480]), Some(480));
        assert_eq!(modal_exposure(&[]), None);
    }

    #[test]
    fn all_correct_evaluator_bottoms_out() {
        let s = run(cfg(), &[true; 150]);
        // 500 - 40 * 10 = 100 is first reached on trial 41 and held afterwards.
        assert_eq!(s.history[40].exposure, 100);
        assert_eq!(s.history[39].exposure, 110);
        let r = s.block_mode().unwrap();
        assert_eq!(r.modal_exposure, 100);
        assert_eq!(r.trial_count, 150);
        assert!((r.floor_fraction - 110.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn thresholds() {
        let b = |m| BlockResult { modal_exposure: m, trial_count: 150, floor_fraction: 0.0 };
        let t: SessionThreshold = session_threshold(&[b(400), b(410), b(390)], "e").unwrap();
        assert_eq!(t.threshold_ms, 400.0);
        let t: SessionThreshold = session_threshold(&[b(100), b(100), b(100)], "e").unwrap();
        assert_eq!(t.threshold_ms, 100.0);
        let t: SessionThreshold<f32> = session_threshold(&[b(520)], "e").unwrap();
        assert_eq!(t.threshold_ms, 520.0);
        assert!(session_threshold::<f64>(&[], "e").is_err());
    }

    #[test]
    fn session_rolls_over_blocks() {
        let mut s = StaircaseSession::new(cfg()).unwrap();
        for i in 0..450 {
            assert_eq!(s.block_index(), i / 150);
            s.record(i % 4 != 0).unwrap();
        }
        assert!(s.is_complete());
        assert_eq!(s.current_exposure(), None);
        assert_eq!(s.finished_blocks().len(), 3);
        assert!(s.record(true).is_err());
        let t: SessionThreshold = s.threshold("e").unwrap();
        let mean = s.finished_blocks().iter().map(|b| b.modal_exposure as f64).sum::<f64>() / 3.0;
        assert_eq!(t.threshold_ms, mean);
    }

    #[test]
    fn target_accuracy_of_default_steps() {
        assert_eq!(cfg().target_accuracy(), 0.75);
        assert_eq!(cfg().fakes_per_block(), 75);
    }

    proptest! {
        #[test]
        fn exposures_stay_in_range(answers in prop::collection::vec(any::<bool>(), 0..150)) {
            let s = run(cfg(), &answers);
            prop_assert_eq!(s.history.len(), s.trial_index);
            for t in &s.history {
                prop_assert!((100..=1000).contains(&t.exposure));
            }
            prop_assert!((100..=1000).contains(&s.current_exposure));
        }

        #[test]
        fn deterministic(answers in prop::collection::vec(any::<bool>(), 0..150)) {
            prop_assert_eq!(run(cfg(), &answers), run(cfg(), &answers));
        }

        #[test]
        fn step_accounting_without_clamps(answers in prop::collection::vec(any::<bool>(), 0..40)) {
            // Independent of the implementation: track the unclamped walk directly.
            let mut unclamped: i64 = 500;
            let mut clamped = false;
            for &c in &answers {
                unclamped += if c { -10 } else { 30 };
                clamped |= !(100..=1000).contains(&unclamped);
            }
            let correct = answers.iter().filter(|&&c| c).count() as i64;
            let wrong = answers.len() as i64 - correct;
            prop_assert_eq!(unclamped, 500 - 10 * correct + 30 * wrong);
            if !clamped {
                prop_assert_eq!(i64::from(run(cfg(), &answers).current_exposure), unclamped);
            }
        }

        #[test]
        fn fixing_a_mistake_never_raises_later_exposures(
            answers in prop::collection::vec(any::<bool>(), 1..40),
            pick in any::<prop::sample::Index>(),
        ) {
            let wrong: Vec<usize> = (0..answers.len()).filter(|&i| !answers[i]).collect();
            prop_assume!(!wrong.is_empty());
            let i = wrong[pick.index(wrong.len())];
            let mut fixed = answers.clone();
            fixed[i] = true;
            let a = run(cfg(), &answers);
            let b = run(cfg(), &fixed);
            for (x, y) in a.history.iter().zip(&b.history) {
                prop_assert!(y.exposure <= x.exposure);
            }
            prop_assert!(b.current_exposure <= a.current_exposure);
        }
    }
}
