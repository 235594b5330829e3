//! Training configuration, presets and the flat TOML config file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Encoders,
    Decoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset {s:?} (paper | desk)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub preset: Preset,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    /// Write a checkpoint every this many iterations; 0 only at the end.
    pub checkpoint_every: usize,
    /// Stage one crops each original/augmented pair to one common length of
    /// at most this many frames; 0 keeps whole utterances.
    #[serde(default)]
    pub crop_frames: usize,
}

impl TrainConfig {
    pub fn preset(stage: Stage, preset: Preset) -> Self {
        let (learning_rate, iterations) = match (stage, preset) {
            (Stage::Encoders, Preset::Paper) => (1e-6, 30_000),
            (Stage::Decoder, Preset::Paper) => (1e-4, 600_000),
            (Stage::Encoders, Preset::Desk) => (1e-4, 3_000),
            (Stage::Decoder, Preset::Desk) => (1e-4, 5_000),
        };
        TrainConfig {
            stage,
            preset,
            learning_rate,
            iterations,
            batch_size: 16,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            checkpoint_every: 0,
            crop_frames: match stage {
                Stage::Encoders => 32,
                Stage::Decoder => 0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be > 0".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be >= 0".into()));
        }
        Ok(())
    }

    /// Applies the keys present in a flat TOML document on top of `self`.
    /// When the document names a `preset` or `stage`, the preset values are
    /// loaded first and the remaining keys override them.
    pub fn merge_toml(self, text: &str) -> Result<Self> {
        let f: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = if f.preset.is_some() || f.stage.is_some() {
            let mut base = TrainConfig::preset(f.stage.unwrap_or(self.stage), f.preset.unwrap_or(self.preset));
            base.seed = self.seed;
            base
        } else {
            self
        };
        if let Some(v) = f.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = f.iterations {
            c.iterations = v;
        }
        if let Some(v) = f.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = f.seed {
            c.seed = v;
        }
        if let Some(v) = f.beta1 {
            c.beta1 = v;
        }
        if let Some(v) = f.beta2 {
            c.beta2 = v;
        }
        if let Some(v) = f.eps {
            c.eps = v;
        }
        if let Some(v) = f.clip_norm {
            c.clip_norm = v;
        }
        if let Some(v) = f.checkpoint_every {
            c.checkpoint_every = v;
        }
        if let Some(v) = f.crop_frames {
            c.crop_frames = v;
        }
        Ok(c)
    }

    pub fn merge_file(self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    stage: Option<Stage>,
    preset: Option<Preset>,
    learning_rate: Option<f64>,
    iterations: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps: Option<f64>,
    clip_norm: Option<f64>,
    checkpoint_every: Option<usize>,
    crop_frames: Option<usize>,
}
