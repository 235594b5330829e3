//! Deterministic waveform/feature transforms.
//!
//! Framing is fixed: 16 kHz audio, 800-sample (50 ms) Hann windows, 400-sample
//! hop, frames centered on `t * HOP` with zero padding at both edges, so an
//! utterance of `n` samples always yields `ceil(n / HOP)` frames. Mel and F0
//! analysis share this framing and are therefore always frame-aligned.

mod f0;
mod griffin_lim;
mod mel;
pub mod melfile;
mod resample;
mod stats;
mod stft;
pub mod wav;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use f0::{estimate_f0, F0Track, F0_MAX_HZ, F0_MIN_HZ};
pub use griffin_lim::{griffin_lim, GRIFFIN_LIM_ITERATIONS};
pub use mel::{mel_filterbank, mel_spectrogram, mel_center_frequencies};
pub use resample::resample;
pub use stats::{mean, median, pcc, spearman};
pub use stft::{num_frames, Stft};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW: usize = 800;
pub const HOP: usize = 400;
pub const N_FFT: usize = 800;
pub const N_MELS: usize = 80;
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono 16 kHz audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if samples.len() < WINDOW {
            return Err(Error::invalid(format!(
                "waveform has {} samples, need at least one window ({WINDOW})",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform { samples })
    }

    /// Wraps samples without the minimum-length check. Used by synthesis paths
    /// whose output length is already guaranteed by construction.
    pub(crate) fn from_raw(samples: Vec<f32>) -> Self {
        Waveform { samples }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    pub fn num_frames(&self) -> usize {
        num_frames(self.samples.len())
    }

    pub fn rms(&self) -> f64 {
        let ss: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (ss / self.samples.len().max(1) as f64).sqrt()
    }
}

/// Log-mel energies, `[frames x N_MELS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    frames: Array2<f32>,
}

impl MelSpectrogram {
    pub fn new(frames: Array2<f32>) -> Result<Self> {
        if frames.ncols() != N_MELS {
            return Err(Error::shape(format!(
                "mel must have {N_MELS} bins, got {}",
                frames.ncols()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mel contains non-finite values"));
        }
        Ok(MelSpectrogram { frames })
    }

    pub fn frames(&self) -> &Array2<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f32> {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    /// Row-wise mean over frames, one value per mel bin.
    pub fn mean_frame(&self) -> Vec<f32> {
        let t = self.frames.nrows().max(1) as f32;
        self.frames
            .columns()
            .into_iter()
            .map(|c| c.sum() / t)
            .collect()
    }
}

/// Per-speaker log-F0 statistics over voiced frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerPitchStats {
    pub mean_logf0: f64,
    pub std_logf0: f64,
}

impl SpeakerPitchStats {
    pub fn new(mean_logf0: f64, std_logf0: f64) -> Result<Self> {
        if !(std_logf0 > 0.0) || !mean_logf0.is_finite() || !std_logf0.is_finite() {
            return Err(Error::invalid(format!(
                "speaker pitch stats need finite mean and std > 0 (got mean {mean_logf0}, std {std_logf0})"
            )));
        }
        Ok(SpeakerPitchStats {
            mean_logf0,
            std_logf0,
        })
    }

    /// Pools voiced log-F0 values from any number of tracks.
    pub fn from_log_f0(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("no voiced frames to compute pitch stats"));
        }
        let m = mean(values);
        let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
        // A perfectly flat speaker still needs a usable scale.
        let std = var.sqrt().max(1e-3);
        SpeakerPitchStats::new(m, std)
    }

    pub fn hz_for(&self, normalized: f64) -> f64 {
        (self.mean_logf0 + self.std_logf0 * normalized).exp()
    }
}

/// Normalized log-F0 with voicing flags; unvoiced frames are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    logf0: Vec<f32>,
    voiced: Vec<bool>,
}

impl PitchContour {
    pub fn new(logf0: Vec<f32>, voiced: Vec<bool>) -> Result<Self> {
        if logf0.len() != voiced.len() {
            return Err(Error::shape(format!(
                "contour has {} values but {} voicing flags",
                logf0.len(),
                voiced.len()
            )));
        }
        for (i, (&v, &on)) in logf0.iter().zip(&voiced).enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("non-finite contour value at {i}")));
            }
            if !on && v != 0.0 {
                return Err(Error::invalid(format!(
                    "unvoiced frame {i} must have zero contour"
                )));
            }
        }
        Ok(PitchContour { logf0, voiced })
    }

    pub fn logf0(&self) -> &[f32] {
        &self.logf0
    }

    pub fn voiced(&self) -> &[bool] {
        &self.voiced
    }

    pub fn len(&self) -> usize {
        self.logf0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logf0.is_empty()
    }

    /// Two input channels per frame: the contour value and the voicing flag.
    pub fn as_features(&self) -> Array2<f32> {
        let mut out = Array2::zeros((self.len(), 2));
        for (i, (&v, &on)) in self.logf0.iter().zip(&self.voiced).enumerate() {
            out[[i, 0]] = v;
            out[[i, 1]] = if on { 1.0 } else { 0.0 };
        }
        out
    }

    pub fn median_voiced(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .logf0
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &on)| on)
            .map(|(&x, _)| x as f64)
            .collect();
        if v.is_empty() {
            None
        } else {
            Some(median(&v))
        }
    }
}

/// Z-scores voiced log-F0 with the speaker's statistics.
pub fn normalize_pitch(
    f0_hz: &[f64],
    voiced: &[bool],
    stats: &SpeakerPitchStats,
) -> Result<PitchContour> {
    if !(stats.std_logf0 > 0.0) {
        return Err(Error::invalid("std_logf0 must be > 0"));
    }
    if f0_hz.len() != voiced.len() {
        return Err(Error::shape("f0 and voicing lengths differ"));
    }
    let logf0 = f0_hz
        .iter()
        .zip(voiced)
        .map(|(&f, &on)| {
            if on && f > 0.0 {
                ((f.ln() - stats.mean_logf0) / stats.std_logf0) as f32
            } else {
                0.0
            }
        })
        .collect();
    let voiced = f0_hz
        .iter()
        .zip(voiced)
        .map(|(&f, &on)| on && f > 0.0)
        .collect();
    PitchContour::new(logf0, voiced)
}
