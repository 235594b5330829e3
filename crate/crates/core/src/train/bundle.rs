//! Everything a trained (or partially trained) model needs, in one checkpoint.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use crate::augment::AugmentationConfig;
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::nets::{
    Checkpoint, DecoderConfig, DecoderModel, EncoderConfig, EncoderModel, Layout,
};
use crate::signal::SpeakerPitchStats;

/// Optimizer and sampler state of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub cfg: TrainConfig,
    pub iteration: usize,
    pub adam: Adam<f32>,
    pub rng: ChaCha8Rng,
}

/// Separates the batch-sampling stream from parameter initialization.
const SAMPLER_SALT: u64 = 0x5eed_ba7c_0000_0001;

impl TrainState {
    pub fn fresh(cfg: TrainConfig, n_params: usize) -> Self {
        TrainState {
            cfg,
            iteration: 0,
            adam: Adam::new(n_params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLER_SALT),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub n_speakers: usize,
    pub encoder: EncoderModel,
    pub decoder: Option<DecoderModel>,
    pub speaker_stats: BTreeMap<usize, SpeakerPitchStats>,
    pub augmentation: AugmentationConfig,
    pub encoder_train: Option<TrainState>,
    pub decoder_train: Option<TrainState>,
}

impl PartialEq for EncoderModel {
    fn eq(&self, o: &Self) -> bool {
        self.net.cfg == o.net.cfg && self.params == o.params
    }
}

impl PartialEq for DecoderModel {
    fn eq(&self, o: &Self) -> bool {
        self.net.cfg == o.net.cfg && self.params == o.params
    }
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    cfg: TrainConfig,
    iteration: usize,
    adam_t: u64,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format: String,
    n_speakers: usize,
    encoder: EncoderConfig,
    decoder: Option<DecoderConfig>,
    augmentation: AugmentationConfig,
    /// `(speaker, mean_logf0, std_logf0)`
    speaker_stats: Vec<(usize, f64, f64)>,
    encoder_train: Option<StateMeta>,
    decoder_train: Option<StateMeta>,
}

const FORMAT: &str = "rdvc-model";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Checkpoint("bad rng seed".into());
    if s.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

fn state_meta(s: &TrainState) -> StateMeta {
    StateMeta {
        cfg: s.cfg,
        iteration: s.iteration,
        adam_t: s.adam.t,
        rng_seed: hex(&s.rng.get_seed()),
        rng_stream: s.rng.get_stream(),
        rng_word_pos: s.rng.get_word_pos().to_string(),
    }
}

fn restore_state(m: StateMeta, ck: &Checkpoint, prefix: &str, layout: &Layout) -> Result<TrainState> {
    let mut rng = ChaCha8Rng::from_seed(unhex(&m.rng_seed)?);
    rng.set_stream(m.rng_stream);
    rng.set_word_pos(
        m.rng_word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng position".into()))?,
    );
    let mut adam = Adam::new(layout.len(), m.cfg.learning_rate, m.cfg.beta1, m.cfg.beta2, m.cfg.eps);
    adam.t = m.adam_t;
    adam.m = ck.read_params(&format!("{prefix}adam_m."), layout)?;
    adam.v = ck.read_params(&format!("{prefix}adam_v."), layout)?;
    Ok(TrainState {
        cfg: m.cfg,
        iteration: m.iteration,
        adam,
        rng,
    })
}

impl ModelBundle {
    pub fn new(
        n_speakers: usize,
        encoder_cfg: EncoderConfig,
        seed: u64,
        speaker_stats: BTreeMap<usize, SpeakerPitchStats>,
        augmentation: AugmentationConfig,
    ) -> Result<Self> {
        if n_speakers == 0 {
            return Err(Error::invalid("a model needs at least one speaker"));
        }
        augmentation.validate()?;
        Ok(ModelBundle {
            n_speakers,
            encoder: EncoderModel::new(encoder_cfg, seed)?,
            decoder: None,
            speaker_stats,
            augmentation,
            encoder_train: None,
            decoder_train: None,
        })
    }

    /// Fresh untrained model whose pitch statistics come from `corpus`.
    pub fn for_corpus(corpus: &Corpus, encoder_cfg: EncoderConfig, seed: u64) -> Result<Self> {
        ModelBundle::new(
            corpus.n_speakers,
            encoder_cfg,
            seed,
            corpus.speaker_stats()?,
            AugmentationConfig::default(),
        )
    }

    pub fn stats(&self, speaker: usize) -> Result<&SpeakerPitchStats> {
        self.speaker_stats
            .get(&speaker)
            .ok_or_else(|| Error::invalid(format!("speaker {speaker} unknown to the model")))
    }

    pub fn decoder(&self) -> Result<&DecoderModel> {
        self.decoder
            .as_ref()
            .ok_or_else(|| Error::invalid("checkpoint has no trained decoder"))
    }

    /// Rejects corpora whose speaker count differs from the model's.
    pub fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        if corpus.n_speakers != self.n_speakers {
            return Err(Error::invalid(format!(
                "model has {} speakers but the corpus has {}",
                self.n_speakers, corpus.n_speakers
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = Meta {
            format: FORMAT.into(),
            n_speakers: self.n_speakers,
            encoder: self.encoder.net.cfg.clone(),
            decoder: self.decoder.as_ref().map(|d| d.net.cfg.clone()),
            augmentation: self.augmentation,
            speaker_stats: self
                .speaker_stats
                .iter()
                .map(|(&k, s)| (k, s.mean_logf0, s.std_logf0))
                .collect(),
            encoder_train: self.encoder_train.as_ref().map(state_meta),
            decoder_train: self.decoder_train.as_ref().map(state_meta),
        };
        let mut ck = Checkpoint {
            config_json: serde_json::to_string(&meta).expect("meta serializes"),
            tensors: Vec::new(),
        };
        let el = &self.encoder.net.layout;
        ck.push_params("encoder.", el, &self.encoder.params);
        if let Some(s) = &self.encoder_train {
            ck.push_params("encoder.adam_m.", el, &s.adam.m);
            ck.push_params("encoder.adam_v.", el, &s.adam.v);
        }
        if let Some(d) = &self.decoder {
            let dl = &d.net.layout;
            ck.push_params("decoder.", dl, &d.params);
            if let Some(s) = &self.decoder_train {
                ck.push_params("decoder.adam_m.", dl, &s.adam.m);
                ck.push_params("decoder.adam_v.", dl, &s.adam.v);
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: Meta = serde_json::from_str(&ck.config_json)
            .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
        if meta.format != FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format {:?}", meta.format)));
        }
        let enc_net = crate::nets::EncoderNet::new(meta.encoder.clone())?;
        let enc_params = ck.read_params("encoder.", &enc_net.layout)?;
        let encoder = EncoderModel::from_params(meta.encoder, enc_params)?;
        let encoder_train = meta
            .encoder_train
            .map(|m| restore_state(m, ck, "encoder.", &encoder.net.layout))
            .transpose()?;
        let (decoder, decoder_train) = match meta.decoder {
            Some(cfg) => {
                if cfg.n_speakers != meta.n_speakers {
                    return Err(Error::Checkpoint("decoder speaker table size mismatch".into()));
                }
                let net = crate::nets::DecoderNet::new(cfg.clone())?;
                let params = ck.read_params("decoder.", &net.layout)?;
                let dec = DecoderModel::from_params(cfg, params)?;
                let st = meta
                    .decoder_train
                    .map(|m| restore_state(m, ck, "decoder.", &dec.net.layout))
                    .transpose()?;
                (Some(dec), st)
            }
            None => (None, None),
        };
        let speaker_stats = meta
            .speaker_stats
            .into_iter()
            .map(|(k, m, s)| Ok((k, SpeakerPitchStats::new(m, s)?)))
            .collect::<Result<_>>()?;
        Ok(ModelBundle {
            n_speakers: meta.n_speakers,
            encoder,
            decoder,
            speaker_stats,
            augmentation: meta.augmentation,
            encoder_train,
            decoder_train,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ModelBundle::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Adds an untrained decoder if none exists yet.
    pub fn ensure_decoder(&mut self, cfg: DecoderConfig, seed: u64) -> Result<()> {
        if self.decoder.is_none() {
            let enc = &self.encoder.net.cfg;
            let cfg = DecoderConfig {
                d_content: enc.d_content,
                d_rhythm: enc.d_rhythm,
                d_pitch: enc.d_pitch,
                n_speakers: self.n_speakers,
                ..cfg
            };
            self.decoder = Some(DecoderModel::new(cfg, seed)?);
        }
        Ok(())
    }
}
