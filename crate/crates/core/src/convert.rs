//! Voice conversion by swapping latent streams between two utterances.

use std::fmt;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Features;
use crate::error::{Error, Result};
use crate::nets::LatentBundle;
use crate::signal::{griffin_lim, MelSpectrogram, Waveform, GRIFFIN_LIM_ITERATIONS};
use crate::train::ModelBundle;

/// Which components of the output come from the target utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConversionCombination {
    pub convert_pitch: bool,
    pub convert_rhythm: bool,
    pub convert_timbre: bool,
}

impl ConversionCombination {
    pub fn new(convert_pitch: bool, convert_rhythm: bool, convert_timbre: bool) -> Result<Self> {
        if !(convert_pitch || convert_rhythm || convert_timbre) {
            return Err(Error::invalid(
                "a conversion must convert at least one component (use reconstruct otherwise)",
            ));
        }
        Ok(ConversionCombination {
            convert_pitch,
            convert_rhythm,
            convert_timbre,
        })
    }

    pub const PITCH: Self = Self::of(true, false, false);
    pub const RHYTHM: Self = Self::of(false, true, false);
    pub const TIMBRE: Self = Self::of(false, false, true);

    const fn of(p: bool, r: bool, t: bool) -> Self {
        ConversionCombination {
            convert_pitch: p,
            convert_rhythm: r,
            convert_timbre: t,
        }
    }

    /// The seven non-empty combinations, single components first.
    pub fn all() -> [Self; 7] {
        [
            Self::of(true, false, false),
            Self::of(false, true, false),
            Self::of(false, false, true),
            Self::of(true, true, false),
            Self::of(true, false, true),
            Self::of(false, true, true),
            Self::of(true, true, true),
        ]
    }

    /// Display name such as `Pitch-only` or `Pitch+Rhythm+Timbre`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.convert_pitch, "Pitch"),
            (self.convert_rhythm, "Rhythm"),
            (self.convert_timbre, "Timbre"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if parts.len() == 1 {
            format!("{}-only", parts[0])
        } else {
            parts.join("+")
        }
    }
}

impl fmt::Display for ConversionCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for ConversionCombination {
    type Err = Error;

    /// Comma-separated component names, e.g. `pitch,rhythm`.
    fn from_str(s: &str) -> Result<Self> {
        let (mut p, mut r, mut t) = (false, false, false);
        for part in s.split([',', '+']).map(|x| x.trim().to_ascii_lowercase()) {
            match part.as_str() {
                "pitch" | "p" => p = true,
                "rhythm" | "r" => r = true,
                "timbre" | "t" => t = true,
                "" => {}
                other => return Err(Error::invalid(format!("unknown component {other:?}"))),
            }
        }
        ConversionCombination::new(p, r, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerUtterance {
    pub waveform: Waveform,
    pub speaker_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionRequest {
    pub source: SpeakerUtterance,
    pub target: SpeakerUtterance,
    pub combination: ConversionCombination,
}

/// Linear interpolation of a frame sequence to `t_out` frames. The first and
/// last frames map onto the first and last output frames.
pub fn resample_frames(z: &ArrayView2<f32>, t_out: usize) -> Array2<f32> {
    let t_in = z.nrows();
    assert!(t_in > 0 && t_out > 0, "cannot resample empty sequences");
    if t_in == t_out {
        return z.to_owned();
    }
    let mut out = Array2::zeros((t_out, z.ncols()));
    for j in 0..t_out {
        let pos = if t_out == 1 {
            0.0
        } else {
            j as f64 * (t_in - 1) as f64 / (t_out - 1) as f64
        };
        let lo = (pos.floor() as usize).min(t_in - 1);
        let hi = (lo + 1).min(t_in - 1);
        let w = (pos - lo as f64) as f32;
        let mut row = out.row_mut(j);
        for k in 0..z.ncols() {
            row[k] = z[[lo, k]] * (1.0 - w) + z[[hi, k]] * w;
        }
    }
    out
}

/// Encodes features of a speaker's utterance; pitch is normalized with that
/// speaker's statistics.
pub fn encode_features(model: &ModelBundle, f: &Features, speaker_id: usize) -> Result<LatentBundle> {
    check_speaker(model, speaker_id)?;
    let contour = f.contour(model.stats(speaker_id)?)?;
    model.encoder.encode(&f.mel, &contour)
}

pub fn encode_utterance(model: &ModelBundle, u: &SpeakerUtterance) -> Result<LatentBundle> {
    if u.waveform.is_empty() {
        return Err(Error::invalid("cannot convert an empty utterance"));
    }
    encode_features(model, &Features::of(&u.waveform)?, u.speaker_id)
}

fn check_speaker(model: &ModelBundle, speaker_id: usize) -> Result<()> {
    if speaker_id >= model.n_speakers {
        return Err(Error::invalid(format!(
            "speaker {speaker_id} is outside the model's {} speakers",
            model.n_speakers
        )));
    }
    Ok(())
}

/// Recombines already-encoded source and target latents.
pub fn convert_latents(
    model: &ModelBundle,
    source: (&LatentBundle, usize),
    target: (&LatentBundle, usize),
    combo: ConversionCombination,
) -> Result<MelSpectrogram> {
    let (src, spk_s) = source;
    let (tgt, spk_t) = target;
    check_speaker(model, spk_s)?;
    check_speaker(model, spk_t)?;
    let z_r = if combo.convert_rhythm { &tgt.z_r } else { &src.z_r };
    let z_p = if combo.convert_pitch { &tgt.z_p } else { &src.z_p };
    let t_out = z_r.nrows();
    let z_p = resample_frames(&z_p.view(), t_out);
    let z_c = resample_frames(&src.z_c.view(), t_out);
    let speaker = if combo.convert_timbre { spk_t } else { spk_s };
    model
        .decoder()?
        .decode(&z_c.view(), &z_r.view(), &z_p.view(), speaker)
}

pub fn convert(model: &ModelBundle, req: &ConversionRequest) -> Result<MelSpectrogram> {
    let src = encode_utterance(model, &req.source)?;
    let tgt = encode_utterance(model, &req.target)?;
    convert_latents(
        model,
        (&src, req.source.speaker_id),
        (&tgt, req.target.speaker_id),
        req.combination,
    )
}

/// Encode and decode with the utterance's own speaker.
pub fn reconstruct(model: &ModelBundle, u: &SpeakerUtterance) -> Result<MelSpectrogram> {
    let z = encode_utterance(model, u)?;
    model.decoder()?.decode_bundle(&z, u.speaker_id)
}

/// Listening-quality waveform from a mel spectrogram.
pub fn synthesize(mel: &MelSpectrogram) -> Result<Waveform> {
    griffin_lim(mel, GRIFFIN_LIM_ITERATIONS)
}
