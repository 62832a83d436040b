//! Run configuration, loaded from TOML.
//!
//! ```toml
//! seed = 17
//! feature_dim = 16
//!
//! [field]
//! steps = 300
//! lr = 0.05
//!
//! [grounding]
//! n_cluster = 24
//! n_global = 8
//! refine_steps = 50
//! refine_lr = 20.0
//! tau_abstain = 0.25
//!
//! [backend]
//! kind = "oracle"            # oracle | bbox-fill | remote
//! ground_url = "http://127.0.0.1:8080"
//! mask_url = "http://127.0.0.1:8081"
//! timeout_secs = 60
//! max_in_flight = 4
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::TrainParams;
use crate::glspag::GroundingConfig;
use crate::lmseg::{RemoteConfig, DEFAULT_PROMPT, DEFAULT_TAU};
use crate::scene::DEFAULT_FEATURE_DIM;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Oracle,
    BboxFill,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "bbox-fill" => Ok(Self::BboxFill),
            "remote" => Ok(Self::Remote),
            other => Err(Error::Config(format!("unknown backend '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    pub steps: usize,
    pub lr: f64,
    pub background_weight: f64,
    pub clip_norm: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        let t = TrainParams::default();
        Self {
            steps: t.steps,
            lr: t.lr,
            background_weight: t.background_weight,
            clip_norm: t.clip_norm,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundingSection {
    pub n_cluster: usize,
    pub n_global: usize,
    pub refine_steps: usize,
    pub refine_lr: f64,
    pub tau_abstain: f64,
    pub min_visible_pixels: usize,
}

impl Default for GroundingSection {
    fn default() -> Self {
        let g = GroundingConfig::default();
        Self {
            n_cluster: g.n_cluster,
            n_global: g.n_global,
            refine_steps: g.refine_steps,
            refine_lr: g.refine_lr,
            tau_abstain: DEFAULT_TAU,
            min_visible_pixels: g.min_visible_pixels,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub ground_url: String,
    pub mask_url: Option<String>,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    pub attempts: u32,
    pub prompt: String,
}

impl Default for BackendSection {
    fn default() -> Self {
        let r = RemoteConfig::default();
        Self {
            kind: BackendKind::Oracle,
            ground_url: r.ground_url,
            mask_url: r.mask_url,
            timeout_secs: r.timeout.as_secs_f64(),
            max_in_flight: r.max_in_flight,
            attempts: r.attempts,
            prompt: DEFAULT_PROMPT.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub feature_dim: usize,
    pub output_dir: PathBuf,
    pub field: FieldSection,
    pub grounding: GroundingSection,
    pub backend: BackendSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 17,
            feature_dim: DEFAULT_FEATURE_DIM,
            output_dir: PathBuf::from("runs"),
            field: FieldSection::default(),
            grounding: GroundingSection::default(),
            backend: BackendSection::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Config = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grounding;
        if g.n_global == 0 || g.n_global > g.n_cluster {
            return Err(Error::Config(format!(
                "n_global ({}) must be in 1..=n_cluster ({})",
                g.n_global, g.n_cluster
            )));
        }
        if !(0.0..1.0).contains(&g.tau_abstain) {
            return Err(Error::Config(format!(
                "tau_abstain ({}) must be in [0, 1)",
                g.tau_abstain
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if !(self.backend.timeout_secs > 0.0) {
            return Err(Error::Config("backend timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn grounding(&self) -> GroundingConfig {
        let g = &self.grounding;
        GroundingConfig {
            seed: self.seed,
            n_cluster: g.n_cluster,
            n_global: g.n_global,
            refine_steps: g.refine_steps,
            refine_lr: g.refine_lr,
            tau: g.tau_abstain,
            min_visible_pixels: g.min_visible_pixels,
            ..GroundingConfig::default()
        }
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            steps: self.field.steps,
            lr: self.field.lr,
            seed: self.seed,
            background_weight: self.field.background_weight,
            clip_norm: self.field.clip_norm,
            ..TrainParams::default()
        }
    }

    pub fn remote(&self) -> RemoteConfig {
        let b = &self.backend;
        RemoteConfig {
            ground_url: b.ground_url.clone(),
            mask_url: b.mask_url.clone(),
            timeout: Duration::from_secs_f64(b.timeout_secs),
            max_in_flight: b.max_in_flight,
            attempts: b.attempts,
            prompt: b.prompt.clone(),
        }
    }
}
