//! Two-stage training: encoders with rank heads first, then the decoder
//! against frozen encoders.

mod adam;
mod bundle;
mod config;
mod stage1;
mod stage2;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use adam::{clip_global_norm, Adam};
pub use bundle::{ModelBundle, TrainState};
pub use config::{Preset, Stage, TrainConfig};
pub use stage1::{encoder_step, train_encoders, EncoderStep};
pub use stage2::{decoder_step, encode_corpus, train_decoder};

use crate::error::{Error, Result};

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub stage: Stage,
    pub iteration: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nce: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recon: Option<f64>,
    pub grad_norm: f64,
    /// Seconds since the current run started.
    pub wall_time: f64,
}

impl TrainLogRecord {
    pub fn is_finite(&self) -> bool {
        [self.rank_r, self.rank_p, self.nce, self.recon]
            .iter()
            .flatten()
            .chain([&self.loss, &self.grad_norm])
            .all(|v| v.is_finite())
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<()> {
        serde_json::to_writer(&mut *w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io("<log>", e))
    }
}

fn nonfinite(rec: &TrainLogRecord) -> Error {
    Error::NonFinite {
        iteration: rec.iteration,
        detail: serde_json::to_string(rec).unwrap_or_else(|_| format!("{rec:?}")),
    }
}
