//! Harmonic toy speech with known content, rhythm, pitch and timbre.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Waveform, SAMPLE_RATE};

pub const DEFAULT_VOCAB: usize = 12;
pub const MIN_TOKENS: usize = 2;
pub const MAX_TOKENS: usize = 12;
pub const RHYTHM_RANGE: (f64, f64) = (0.6, 1.6);
pub const PITCH_RANGE: (f64, f64) = (0.7, 1.4);
pub const TOKEN_SECS: f64 = 0.120;
pub const GAP_SECS: f64 = 0.030;
const RAMP_SECS: f64 = 0.015;
const NOISE_STD: f64 = 3e-4;
const VOICE_RMS: f64 = 0.1;
const MAX_HARMONIC_HZ: f64 = 7600.0;
const BLOCK: usize = 32;

/// Ground truth for one rendered utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyUtteranceSpec {
    pub speaker_id: usize,
    pub content_tokens: Vec<usize>,
    /// Multiplies every duration: larger is slower.
    pub rhythm_factor: f64,
    /// Multiplies the speaker's base F0.
    pub pitch_factor: f64,
    pub seed: u64,
}

impl ToyUtteranceSpec {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        let n = self.content_tokens.len();
        if !(MIN_TOKENS..=MAX_TOKENS).contains(&n) {
            return Err(Error::invalid(format!(
                "toy utterance needs {MIN_TOKENS}..={MAX_TOKENS} tokens, got {n}"
            )));
        }
        if let Some(t) = self.content_tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::invalid(format!("token {t} outside vocabulary of {vocab}")));
        }
        if !(RHYTHM_RANGE.0..=RHYTHM_RANGE.1).contains(&self.rhythm_factor) {
            return Err(Error::invalid("rhythm_factor outside [0.6, 1.6]"));
        }
        if !(PITCH_RANGE.0..=PITCH_RANGE.1).contains(&self.pitch_factor) {
            return Err(Error::invalid("pitch_factor outside [0.7, 1.4]"));
        }
        Ok(())
    }

    /// Draws factors uniformly from their ranges.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, speaker_id: usize, vocab: usize) -> Self {
        let n = rng.random_range(MIN_TOKENS..=MAX_TOKENS);
        ToyUtteranceSpec {
            speaker_id,
            content_tokens: (0..n).map(|_| rng.random_range(0..vocab)).collect(),
            rhythm_factor: rng.random_range(RHYTHM_RANGE.0..=RHYTHM_RANGE.1),
            pitch_factor: rng.random_range(PITCH_RANGE.0..=PITCH_RANGE.1),
            seed: rng.random(),
        }
    }

    /// Median target F0 before the per-token contour.
    pub fn nominal_f0(&self, profile: &SpeakerProfile) -> f64 {
        self.pitch_factor * profile.base_f0
    }
}

/// Timbre of one toy speaker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub base_f0: f64,
    pub formant_scale: f64,
    /// dB per octave relative to 200 Hz.
    pub spectral_tilt: f64,
}

impl SpeakerProfile {
    /// Deterministic profile for speaker `id` of `count`: base F0 spread evenly
    /// over 110-260 Hz, formant scale and tilt on low-discrepancy sequences so
    /// the three timbre axes are not collinear.
    pub fn for_speaker(id: usize, count: usize) -> Self {
        let pos = if count > 1 {
            id as f64 / (count - 1) as f64
        } else {
            0.5
        };
        let golden = 0.618_033_988_749_895;
        let fs = (0.5 + id as f64 * golden).fract();
        let tilt = (0.25 + id as f64 * 0.414_213_562_373_095).fract();
        SpeakerProfile {
            base_f0: 110.0 + 150.0 * pos,
            formant_scale: 0.85 + 0.30 * fs,
            spectral_tilt: -6.0 + 4.0 * tilt,
        }
    }

    pub fn roster(count: usize) -> Vec<SpeakerProfile> {
        (0..count).map(|i| SpeakerProfile::for_speaker(i, count)).collect()
    }
}

/// Formant centers (Hz) and relative gains for token `k`.
fn formants(k: usize) -> [(f64, f64); 3] {
    const TABLE: [[f64; 3]; 12] = [
        [730.0, 1090.0, 2440.0],
        [270.0, 2290.0, 3010.0],
        [300.0, 870.0, 2240.0],
        [530.0, 1840.0, 2480.0],
        [570.0, 840.0, 2410.0],
        [660.0, 1720.0, 2410.0],
        [440.0, 1020.0, 2240.0],
        [490.0, 1350.0, 1690.0],
        [390.0, 1990.0, 2550.0],
        [640.0, 1190.0, 2390.0],
        [360.0, 1600.0, 2900.0],
        [820.0, 1400.0, 3200.0],
    ];
    let base = TABLE[k % TABLE.len()];
    // Vocabularies larger than the table reuse shapes with shifted formants.
    let shift = 1.0 + 0.07 * (k / TABLE.len()) as f64;
    [
        (base[0] * shift, 1.0),
        (base[1] * shift, 0.6),
        (base[2] * shift, 0.3),
    ]
}

const BANDWIDTHS: [f64; 3] = [90.0, 120.0, 170.0];

fn envelope(f: f64, token: usize, profile: &SpeakerProfile) -> f64 {
    let mut a = 0.02;
    for (i, (center, gain)) in formants(token).iter().enumerate() {
        let c = center * profile.formant_scale;
        let b = BANDWIDTHS[i];
        a += gain * b * b / ((f - c) * (f - c) + b * b);
    }
    let tilt = 10f64.powf(profile.spectral_tilt / 20.0 * (f / 200.0).log2());
    a * tilt
}

fn secs_to_samples(s: f64) -> usize {
    (s * SAMPLE_RATE as f64).round() as usize
}

/// Renders one utterance by additive harmonic synthesis.
///
/// Layout: silence, tokens separated by silences, silence. Every segment is
/// scaled by `rhythm_factor`, so total duration is proportional to it. Each
/// token carries a smooth contour within +-10 % of the nominal F0.
pub fn render_toy_utterance(spec: &ToyUtteranceSpec, profile: &SpeakerProfile) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gap = secs_to_samples(GAP_SECS * spec.rhythm_factor);
    let tok = secs_to_samples(TOKEN_SECS * spec.rhythm_factor);
    let ramp = secs_to_samples(RAMP_SECS).min(tok / 3);
    let n_tok = spec.content_tokens.len();
    let total = gap * (n_tok + 1) + tok * n_tok;
    let mut out = vec![0f64; total];

    let f0_nominal = spec.nominal_f0(profile);
    for (i, &token) in spec.content_tokens.iter().enumerate() {
        let slope: f64 = rng.random_range(-0.06..=0.06);
        let bend: f64 = rng.random_range(-0.04..=0.04);
        let start = gap + i * (tok + gap);
        let mut phase = rng.random_range(0.0..(2.0 * PI));
        let mut amps: Vec<f64> = Vec::new();
        for b0 in (0..tok).step_by(BLOCK) {
            let b1 = (b0 + BLOCK).min(tok);
            let u_mid = (b0 + b1) as f64 * 0.5 / tok as f64;
            let f_mid = f0_nominal * (1.0 + slope * (2.0 * u_mid - 1.0) + bend * (PI * u_mid).sin());
            let n_harm = (MAX_HARMONIC_HZ / f_mid).floor().max(1.0) as usize;
            amps.clear();
            amps.extend((1..=n_harm).map(|h| envelope(h as f64 * f_mid, token, profile)));
            let power: f64 = amps.iter().map(|a| a * a * 0.5).sum();
            let norm = VOICE_RMS / power.sqrt().max(1e-12);
            for j in b0..b1 {
                let u = j as f64 / tok as f64;
                let f0 = f0_nominal * (1.0 + slope * (2.0 * u - 1.0) + bend * (PI * u).sin());
                phase += 2.0 * PI * f0 / SAMPLE_RATE as f64;
                if phase > 2.0 * PI {
                    phase -= 2.0 * PI;
                }
                let (s1, c1) = phase.sin_cos();
                let (mut s, mut c) = (s1, c1);
                let mut acc = 0.0;
                for &a in amps.iter() {
                    acc += a * s;
                    let next_s = s * c1 + c * s1;
                    c = c * c1 - s * s1;
                    s = next_s;
                }
                let gain = if j < ramp {
                    0.5 - 0.5 * (PI * j as f64 / ramp as f64).cos()
                } else if j + ramp >= tok {
                    0.5 - 0.5 * (PI * (tok - 1 - j) as f64 / ramp as f64).cos()
                } else {
                    1.0
                };
                out[start + j] = acc * norm * gain;
            }
        }
    }

    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let samples = out
        .into_iter()
        .map(|v| (v + noise.sample(&mut rng)) as f32)
        .collect();
    Waveform::from_raw(samples)
}
