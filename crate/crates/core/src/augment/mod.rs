//! Pitch and rhythm augmentations with intensity targets.
//!
//! An intensity `tau` in (0, 1) encodes direction and strength: `tau < 0.5`
//! lowers pitch / slows down, `tau > 0.5` raises pitch / speeds up, and
//! `tau == 0.5` is an exact passthrough.

mod wsola;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{resample, Waveform};

pub use wsola::time_stretch;

/// Active intensities are never drawn from this band around 0.5.
pub const EXCLUSION_BAND: (f64, f64) = (0.45, 0.55);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentationKind {
    Pitch,
    Rhythm,
}

impl std::str::FromStr for AugmentationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pitch" => Ok(AugmentationKind::Pitch),
            "rhythm" => Ok(AugmentationKind::Rhythm),
            other => Err(Error::invalid(format!("unknown augmentation kind {other:?}"))),
        }
    }
}

/// Which augmentation was applied and the intensity target for each score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    pub tau_p: f64,
    pub tau_r: f64,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("tau must lie in (0, 1), got {tau}")))
    }
}

impl AugmentationSpec {
    /// Builds a spec for `kind` at intensity `tau`; the other dimension is pinned to 0.5.
    pub fn new(kind: AugmentationKind, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(match kind {
            AugmentationKind::Pitch => AugmentationSpec {
                kind,
                tau_p: tau,
                tau_r: 0.5,
            },
            AugmentationKind::Rhythm => AugmentationSpec {
                kind,
                tau_p: 0.5,
                tau_r: tau,
            },
        })
    }

    pub fn active_tau(&self) -> f64 {
        match self.kind {
            AugmentationKind::Pitch => self.tau_p,
            AugmentationKind::Rhythm => self.tau_r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau_p)?;
        check_tau(self.tau_r)?;
        let inactive = match self.kind {
            AugmentationKind::Pitch => self.tau_r,
            AugmentationKind::Rhythm => self.tau_p,
        };
        if inactive != 0.5 {
            return Err(Error::invalid("the inactive intensity must be exactly 0.5"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Pitch shift in semitones at tau = 0 or 1.
    pub s_max: f64,
    /// Tempo ratio at tau = 1 (its inverse at tau = 0).
    pub r_max: f64,
    pub tau_band: (f64, f64),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            s_max: 4.0,
            r_max: 1.5,
            tau_band: (0.1, 0.9),
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_max > 0.0) {
            return Err(Error::invalid("s_max must be > 0"));
        }
        if !(self.r_max > 1.0) {
            return Err(Error::invalid("r_max must be > 1"));
        }
        let (lo, hi) = self.tau_band;
        if !(lo > 0.0 && hi < 1.0 && lo < hi) {
            return Err(Error::invalid("tau_band must be an interval inside (0, 1)"));
        }
        Ok(())
    }

    pub fn semitones(&self, tau: f64) -> f64 {
        (2.0 * tau - 1.0) * self.s_max
    }

    pub fn pitch_ratio(&self, tau: f64) -> f64 {
        2f64.powf(self.semitones(tau) / 12.0)
    }

    pub fn tempo_factor(&self, tau: f64) -> f64 {
        self.r_max.powf(2.0 * tau - 1.0)
    }
}

/// Shifts pitch by `(2 tau - 1) * s_max` semitones, keeping the duration.
pub fn pitch_aug(w: &Waveform, tau: f64, cfg: &AugmentationConfig) -> Result<Waveform> {
    check_tau(tau)?;
    if tau == 0.5 {
        return Ok(w.clone());
    }
    let ratio = cfg.pitch_ratio(tau);
    // Resampling changes pitch and duration together; WSOLA restores the length.
    let shifted = resample(w.samples(), 1.0 / ratio);
    let mut out = time_stretch(&shifted, shifted.len() as f64 / w.len() as f64);
    out.resize(w.len(), 0.0);
    Waveform::new(out)
}

/// Changes tempo by `r_max^(2 tau - 1)`, keeping the pitch.
pub fn rhythm_aug(w: &Waveform, tau: f64, cfg: &AugmentationConfig) -> Result<Waveform> {
    check_tau(tau)?;
    if tau == 0.5 {
        return Ok(w.clone());
    }
    Waveform::new(time_stretch(w.samples(), cfg.tempo_factor(tau)))
}

pub fn apply(w: &Waveform, spec: &AugmentationSpec, cfg: &AugmentationConfig) -> Result<Waveform> {
    match spec.kind {
        AugmentationKind::Pitch => pitch_aug(w, spec.tau_p, cfg),
        AugmentationKind::Rhythm => rhythm_aug(w, spec.tau_r, cfg),
    }
}

/// Draws one augmentation: a uniform kind and an active intensity uniform over
/// the configured band minus the exclusion band.
pub fn sample_augmentation<R: Rng + ?Sized>(rng: &mut R, cfg: &AugmentationConfig) -> AugmentationSpec {
    let kind = if rng.random_bool(0.5) {
        AugmentationKind::Pitch
    } else {
        AugmentationKind::Rhythm
    };
    let (lo, hi) = cfg.tau_band;
    let below = (EXCLUSION_BAND.0.min(hi) - lo).max(0.0);
    let above = (hi - EXCLUSION_BAND.1.max(lo)).max(0.0);
    let u = rng.random::<f64>() * (below + above);
    let tau = if u < below {
        lo + u
    } else {
        EXCLUSION_BAND.1.max(lo) + (u - below)
    };
    AugmentationSpec::new(kind, tau).expect("sampled tau lies inside (0, 1)")
}
