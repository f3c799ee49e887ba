//! Service configuration.
//!
//! Values come from built-in defaults, then an optional TOML file, then
//! environment variables prefixed `HYPE_`. Nested keys are joined with a
//! double underscore, so `HYPE_STAIRCASE__START_EXPOSURE=400` overrides
//! `[staircase] start_exposure`.

use std::path::{Path, PathBuf};

use figment::providers::{Env, Format, Serialized, Toml};
use figment::Figment;
use hype_core::masks::MaskGenerator;
use hype_core::pool::{PaymentPolicy, QualificationPolicy};
use hype_core::stats::{DEFAULT_ITERATIONS, DEFAULT_RESAMPLE_SIZE};
use hype_core::StaircaseConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

pub const ENV_PREFIX: &str = "HYPE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub bind: String,
    pub data_dir: PathBuf,
    pub staircase: StaircaseConfig,
    pub qualification: QualificationPolicy,
    pub payment: PaymentPolicy,
    /// Main-task sessions require a passed qualification.
    pub require_qualification: bool,
    /// Pools whose generated images feed qualification tasks; empty means every pool.
    pub qualification_pools: Vec<String>,
    /// Accept qualification fakes drawn from one generator only.
    pub allow_single_model_qualification: bool,
    pub qualification_seed: u64,
    pub session_idle_timeout_secs: u64,
    pub bootstrap_iterations: usize,
    pub bootstrap_resample_size: usize,
    /// Display frame duration used to flag client timing deviations.
    pub frame_ms: f64,
    /// Deviations beyond this many frames are flagged for review.
    pub timing_tolerance_frames: f64,
    pub mask_generator: MaskGenerator,
    pub countdown_step_ms: u32,
    pub mask_ms: u32,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("hype-data"),
            staircase: StaircaseConfig::default(),
            qualification: QualificationPolicy::default(),
            payment: PaymentPolicy::default(),
            require_qualification: true,
            qualification_pools: Vec::new(),
            allow_single_model_qualification: false,
            qualification_seed: 0,
            session_idle_timeout_secs: 2 * 60 * 60,
            bootstrap_iterations: DEFAULT_ITERATIONS,
            bootstrap_resample_size: DEFAULT_RESAMPLE_SIZE,
            frame_ms: 1000.0 / 60.0,
            timing_tolerance_frames: 2.0,
            mask_generator: MaskGenerator::PhaseScramble,
            countdown_step_ms: 500,
            mask_ms: 30,
        }
    }
}

impl Config {
    /// Defaults, then `path` (if any), then the environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut fig = Figment::from(Serialized::defaults(Config::default()));
        if let Some(p) = path {
            if !p.exists() {
                return Err(ServiceError::Config(format!("config file {} does not exist", p.display())));
            }
            fig = fig.merge(Toml::file(p));
        }
        Self::extract(fig.merge(Env::prefixed(ENV_PREFIX).split("__")))
    }

    pub fn from_toml_str(toml: &str) -> Result<Self> {
        Self::extract(Figment::from(Serialized::defaults(Config::default())).merge(Toml::string(toml)))
    }

    fn extract(fig: Figment) -> Result<Self> {
        let config: Config = fig.extract().map_err(|e| ServiceError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.staircase.validate()?;
        if self.bootstrap_iterations == 0 || self.bootstrap_resample_size == 0 {
            return Err(ServiceError::Config("bootstrap sizes must be positive".into()));
        }
        if self.frame_ms.is_nan() || self.frame_ms <= 0.0 {
            return Err(ServiceError::Config("frame_ms must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.qualification.threshold) {
            return Err(ServiceError::Config("qualification threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn timing_tolerance_ms(&self) -> f64 {
        self.timing_tolerance_frames * self.frame_ms
    }
}
