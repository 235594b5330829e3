//! Corpora on disk and in memory: JSON-lines manifests, toy generation,
//! speaker-folder ingestion and cached features.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::toy::{render_toy_utterance, SpeakerProfile, ToyUtteranceSpec, DEFAULT_VOCAB};
use crate::error::{Error, Result};
use crate::signal::{
    estimate_f0, mel_spectrogram, melfile, normalize_pitch, wav, F0Track, MelSpectrogram,
    PitchContour, SpeakerPitchStats, Waveform,
};

/// Environment variable naming a directory for cached per-utterance features.
pub const CACHE_ENV: &str = "RDVC_CACHE";

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub utt_id: String,
    pub speaker_id: usize,
    pub wav_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_tokens: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhythm_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ManifestRow {
    pub fn truth(&self) -> Option<ToyUtteranceSpec> {
        Some(ToyUtteranceSpec {
            speaker_id: self.speaker_id,
            content_tokens: self.content_tokens.clone()?,
            rhythm_factor: self.rhythm_factor?,
            pitch_factor: self.pitch_factor?,
            seed: self.seed?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: usize,
    pub wav: Waveform,
    pub truth: Option<ToyUtteranceSpec>,
}

/// Mel and F0 analysis of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub mel: MelSpectrogram,
    pub f0: F0Track,
}

impl Features {
    pub fn of(w: &Waveform) -> Result<Self> {
        Ok(Features {
            mel: mel_spectrogram(w)?,
            f0: estimate_f0(w),
        })
    }

    pub fn contour(&self, stats: &SpeakerPitchStats) -> Result<PitchContour> {
        normalize_pitch(&self.f0.f0_hz, &self.f0.voiced, stats)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub n_speakers: usize,
    pub vocab: usize,
    pub utterances: Vec<Utterance>,
    features: Vec<Features>,
}

/// Parameters of a toy corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusConfig {
    pub speakers: usize,
    pub per_speaker: usize,
    pub vocab: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            speakers: 8,
            per_speaker: 200,
            vocab: DEFAULT_VOCAB,
            seed: 0,
        }
    }
}

impl ToyCorpusConfig {
    /// Ground-truth specs in (speaker, index) order.
    pub fn specs(&self) -> Result<Vec<ToyUtteranceSpec>> {
        if self.speakers < 2 {
            return Err(Error::invalid("a corpus needs at least two speakers"));
        }
        if self.vocab < 1 {
            return Err(Error::invalid("vocabulary must be non-empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.speakers * self.per_speaker);
        for spk in 0..self.speakers {
            for _ in 0..self.per_speaker {
                out.push(ToyUtteranceSpec::random(&mut rng, spk, self.vocab));
            }
        }
        Ok(out)
    }
}

fn utt_id(spec: &ToyUtteranceSpec, index: usize) -> String {
    format!("spk{:02}_{:04}", spec.speaker_id, index)
}

impl Corpus {
    /// Renders a toy corpus in memory.
    pub fn toy(cfg: &ToyCorpusConfig) -> Result<Self> {
        let specs = cfg.specs()?;
        let roster = SpeakerProfile::roster(cfg.speakers);
        let utterances: Vec<Utterance> = specs
            .par_iter()
            .enumerate()
            .map(|(i, s)| Utterance {
                utt_id: utt_id(s, i % cfg.per_speaker),
                speaker_id: s.speaker_id,
                wav: render_toy_utterance(s, &roster[s.speaker_id]),
                truth: Some(s.clone()),
            })
            .collect();
        Corpus::from_utterances(cfg.speakers, cfg.vocab, utterances)
    }

    pub fn from_utterances(n_speakers: usize, vocab: usize, utterances: Vec<Utterance>) -> Result<Self> {
        if let Some(u) = utterances.iter().find(|u| u.speaker_id >= n_speakers) {
            return Err(Error::invalid(format!(
                "utterance {} has speaker {} but the corpus has {n_speakers}",
                u.utt_id, u.speaker_id
            )));
        }
        let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
        let features = utterances
            .par_iter()
            .map(|u| cached_features(&u.wav, cache.as_deref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            n_speakers,
            vocab,
            utterances,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn features(&self, i: usize) -> &Features {
        &self.features[i]
    }

    pub fn indices_of_speaker(&self, spk: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.utterances[i].speaker_id == spk)
            .collect()
    }

    /// Loads a manifest; `wav_path` entries are relative to the manifest's directory.
    pub fn load_manifest(path: impl AsRef<Path>, allow_resample: bool) -> Result<Self> {
        let path = path.as_ref();
        let rows = read_manifest(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let utterances = rows
            .par_iter()
            .map(|r| {
                Ok(Utterance {
                    utt_id: r.utt_id.clone(),
                    speaker_id: r.speaker_id,
                    wav: wav::read_wav(base.join(&r.wav_path), allow_resample)?,
                    truth: r.truth(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n_speakers = utterances.iter().map(|u| u.speaker_id + 1).max().unwrap_or(0);
        let vocab = utterances
            .iter()
            .filter_map(|u| u.truth.as_ref())
            .flat_map(|t| t.content_tokens.iter().map(|&k| k + 1))
            .max()
            .unwrap_or(DEFAULT_VOCAB)
            .max(1);
        Corpus::from_utterances(n_speakers, vocab, utterances)
    }
}

/// Features for `w`, read from or written to `cache` when given.
fn cached_features(w: &Waveform, cache: Option<&Path>) -> Result<Features> {
    let Some(dir) = cache else {
        return Features::of(w);
    };
    let mut h = Sha256::new();
    for s in w.samples() {
        h.update(s.to_le_bytes());
    }
    let key: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let mel_path = dir.join(format!("{key}.mel"));
    let f0_path = dir.join(format!("{key}.f0"));
    if let (Ok(mel), Ok(bytes)) = (melfile::read(&mel_path), fs::read(&f0_path)) {
        if let Some(f0) = decode_f0(&bytes, mel.num_frames()) {
            return Ok(Features { mel, f0 });
        }
    }
    let feats = Features::of(w)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    melfile::write(&mel_path, &feats.mel)?;
    fs::write(&f0_path, encode_f0(&feats.f0)).map_err(|e| Error::io(&f0_path, e))?;
    Ok(feats)
}

fn encode_f0(t: &F0Track) -> Vec<u8> {
    let mut b = Vec::with_capacity(t.len() * 9);
    for (&f, &v) in t.f0_hz.iter().zip(&t.voiced) {
        b.extend_from_slice(&f.to_le_bytes());
        b.push(v as u8);
    }
    b
}

fn decode_f0(b: &[u8], frames: usize) -> Option<F0Track> {
    if b.len() != frames * 9 {
        return None;
    }
    let mut track = F0Track {
        f0_hz: Vec::with_capacity(frames),
        voiced: Vec::with_capacity(frames),
    };
    for c in b.chunks_exact(9) {
        track.f0_hz.push(f64::from_le_bytes(c[..8].try_into().ok()?));
        track.voiced.push(c[8] != 0);
    }
    Some(track)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), n + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in rows {
        let line = serde_json::to_string(r)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Renders a toy corpus to `out_dir/wavs/*.wav` plus `out_dir/manifest.jsonl`.
/// Returns the manifest path.
pub fn generate_corpus(cfg: &ToyCorpusConfig, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("wavs");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let specs = cfg.specs()?;
    let roster = SpeakerProfile::roster(cfg.speakers);
    let rows = specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let id = utt_id(s, i % cfg.per_speaker);
            let rel = format!("wavs/{id}.wav");
            wav::write_wav(out_dir.join(&rel), &render_toy_utterance(s, &roster[s.speaker_id]))?;
            Ok(ManifestRow {
                utt_id: id,
                speaker_id: s.speaker_id,
                wav_path: rel,
                content_tokens: Some(s.content_tokens.clone()),
                rhythm_factor: Some(s.rhythm_factor),
                pitch_factor: Some(s.pitch_factor),
                seed: Some(s.seed),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

/// Builds a manifest for a directory of speaker folders (`root/<speaker>/*.wav`).
/// Speakers are numbered in sorted folder order. WAVs are referenced in place.
pub fn ingest_directory(root: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<usize> {
    let root = root.as_ref();
    let manifest = manifest.as_ref();
    let mut speakers: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    speakers.sort();
    let base = manifest
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    let base = fs::canonicalize(&base).map_err(|e| Error::io(&base, e))?;
    let mut rows = Vec::new();
    for (spk, dir) in speakers.iter().enumerate() {
        let mut wavs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        wavs.sort();
        for w in wavs {
            let abs = fs::canonicalize(&w).map_err(|e| Error::io(&w, e))?;
            let rel = abs
                .strip_prefix(&base)
                .map(|p| p.to_path_buf())
                .unwrap_or(abs.clone());
            let stem = w.file_stem().and_then(|s| s.to_str()).unwrap_or("utt");
            rows.push(ManifestRow {
                utt_id: format!("spk{spk:02}_{stem}"),
                speaker_id: spk,
                wav_path: rel.to_string_lossy().into_owned(),
                content_tokens: None,
                rhythm_factor: None,
                pitch_factor: None,
                seed: None,
            });
        }
    }
    write_manifest(manifest, &rows)?;
    Ok(rows.len())
}

/// Per-speaker statistics of voiced log-F0 over all of that speaker's utterances.
pub fn compute_speaker_stats<'a>(
    tracks: impl IntoIterator<Item = (usize, &'a F0Track)>,
    n_speakers: usize,
) -> Result<BTreeMap<usize, SpeakerPitchStats>> {
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); n_speakers];
    for (spk, t) in tracks {
        if spk >= n_speakers {
            return Err(Error::invalid(format!("speaker {spk} out of range")));
        }
        pooled[spk].extend(t.voiced_log_f0());
    }
    pooled
        .iter()
        .enumerate()
        .map(|(spk, v)| {
            if v.is_empty() {
                Err(Error::invalid(format!("speaker {spk} has no voiced frames")))
            } else {
                Ok((spk, SpeakerPitchStats::from_log_f0(v)?))
            }
        })
        .collect()
}

impl Corpus {
    pub fn speaker_stats(&self) -> Result<BTreeMap<usize, SpeakerPitchStats>> {
        compute_speaker_stats(
            self.utterances
                .iter()
                .zip(&self.features)
                .map(|(u, f)| (u.speaker_id, &f.f0)),
            self.n_speakers,
        )
    }
}
