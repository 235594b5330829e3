//! Mini-batches of original/augmented feature pairs.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use super::corpus::{Corpus, Features};
use super::toy::ToyUtteranceSpec;
use crate::augment::{apply, sample_augmentation, AugmentationConfig, AugmentationSpec};
use crate::error::{Error, Result};
use crate::signal::{MelSpectrogram, PitchContour, SpeakerPitchStats};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub utterance: usize,
    pub mel: MelSpectrogram,
    pub contour: PitchContour,
    pub mel_aug: MelSpectrogram,
    pub contour_aug: PitchContour,
    pub spec: AugmentationSpec,
    pub speaker_id: usize,
    pub truth: Option<ToyUtteranceSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub examples: Vec<TrainingExample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

fn stats_for(stats: &BTreeMap<usize, SpeakerPitchStats>, spk: usize) -> Result<&SpeakerPitchStats> {
    stats
        .get(&spk)
        .ok_or_else(|| Error::invalid(format!("no pitch statistics for speaker {spk}")))
}

/// Draws `b` distinct utterances and one augmentation each. All randomness is
/// consumed up front, so featurization may run on any number of workers.
pub fn build_batch<R: Rng + ?Sized>(
    corpus: &Corpus,
    stats: &BTreeMap<usize, SpeakerPitchStats>,
    rng: &mut R,
    b: usize,
    cfg: &AugmentationConfig,
) -> Result<Batch> {
    if b < 2 {
        return Err(Error::invalid("batch size must be at least 2"));
    }
    if corpus.len() < b {
        return Err(Error::invalid(format!(
            "batch of {b} needs at least {b} utterances, corpus has {}",
            corpus.len()
        )));
    }
    let picks: Vec<(usize, AugmentationSpec)> = sample(rng, corpus.len(), b)
        .into_iter()
        .map(|i| (i, sample_augmentation(rng, cfg)))
        .collect();
    let examples = picks
        .into_par_iter()
        .map(|(i, spec)| make_example(corpus, stats, i, spec, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch { examples })
}

/// Featurizes utterance `i` and its augmentation under `spec`.
pub fn make_example(
    corpus: &Corpus,
    stats: &BTreeMap<usize, SpeakerPitchStats>,
    i: usize,
    spec: AugmentationSpec,
    cfg: &AugmentationConfig,
) -> Result<TrainingExample> {
    let u = &corpus.utterances[i];
    let st = stats_for(stats, u.speaker_id)?;
    let orig = corpus.features(i);
    let aug = Features::of(&apply(&u.wav, &spec, cfg)?)?;
    Ok(TrainingExample {
        utterance: i,
        mel: orig.mel.clone(),
        contour: orig.contour(st)?,
        // The augmented contour keeps the original speaker's statistics so a
        // pitch shift stays visible after normalization.
        contour_aug: aug.contour(st)?,
        mel_aug: aug.mel,
        spec,
        speaker_id: u.speaker_id,
        truth: u.truth.clone(),
    })
}

fn crop_features(
    mel: &MelSpectrogram,
    contour: &PitchContour,
    start: usize,
    len: usize,
) -> Result<(MelSpectrogram, PitchContour)> {
    let r = start..start + len;
    Ok((
        MelSpectrogram::new(mel.frames().slice(ndarray::s![r.clone(), ..]).to_owned())?,
        PitchContour::new(contour.logf0()[r.clone()].to_vec(), contour.voiced()[r].to_vec())?,
    ))
}

/// Cuts the original and augmented features of `e` down to one common
/// length of at most `max_frames`. `u` in `[0, 1)` places the original
/// window; the augmented window starts at the matching time under the
/// measured stretch, so both cover roughly the same content.
pub fn crop_example(e: &mut TrainingExample, max_frames: usize, u: f64) -> Result<()> {
    if max_frames == 0 {
        return Err(Error::invalid("crop length must be at least one frame"));
    }
    let (t_o, t_a) = (e.mel.num_frames(), e.mel_aug.num_frames());
    let len = max_frames.min(t_o).min(t_a);
    let a = ((u.clamp(0.0, 1.0) * (t_o - len + 1) as f64) as usize).min(t_o - len);
    let b = ((a as f64 * t_a as f64 / t_o as f64).round() as usize).min(t_a - len);
    (e.mel, e.contour) = crop_features(&e.mel, &e.contour, a, len)?;
    (e.mel_aug, e.contour_aug) = crop_features(&e.mel_aug, &e.contour_aug, b, len)?;
    Ok(())
}
