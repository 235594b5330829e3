//! Encoders, heads and decoder with hand-written backward passes.
//!
//! Networks are generic over [`Scalar`] so training runs in `f32` while
//! gradient checks run in `f64`. Parameters live in one flat vector per
//! network, described by a [`Layout`].

pub mod checkpoint;
mod decoder;
mod encoder;
pub mod layers;
pub mod params;

use ndarray::{s, Array1, Array2, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use decoder::{DecoderConfig, DecoderNet, DecoderPass, LatentGrads};
pub use encoder::{
    mean_pool, mean_unpool, EncoderConfig, EncoderGrads, EncoderNet, EncoderPass, MelNorm,
    NORM_FLOOR,
};
pub use params::{Init, Layout, Slot, TensorInfo};

use crate::error::{Error, Result};
use crate::signal::{MelSpectrogram, PitchContour};

pub trait Scalar:
    ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + num_traits::Float
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + Default
    + Send
    + Sync
{
    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Stacks sequences into one packed matrix.
pub fn pack<F: Scalar>(seqs: &[ArrayView2<F>]) -> (Array2<F>, Vec<usize>) {
    let lens = seqs.iter().map(|s| s.nrows()).collect();
    let data = ndarray::concatenate(Axis(0), seqs).expect("sequences share a width");
    (data, lens)
}

/// Splits a packed matrix back into per-sequence owned matrices.
pub fn unpack<F: Scalar>(data: &Array2<F>, lens: &[usize]) -> Vec<Array2<F>> {
    let off = layers::offsets(lens);
    (0..lens.len())
        .map(|i| data.slice(s![off[i]..off[i + 1], ..]).to_owned())
        .collect()
}

/// Latents of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBundle {
    pub z_c: Array2<f32>,
    pub z_r: Array2<f32>,
    pub z_p: Array2<f32>,
    pub h_c: Array1<f32>,
    pub s_r: f32,
    pub s_p: f32,
}

impl LatentBundle {
    pub fn num_frames(&self) -> usize {
        self.z_c.nrows()
    }
}

fn check_pair(mel: &MelSpectrogram, contour: &PitchContour) -> Result<()> {
    if mel.num_frames() == 0 {
        return Err(Error::invalid("cannot encode an empty utterance"));
    }
    if mel.num_frames() != contour.len() {
        return Err(Error::shape(format!(
            "mel has {} frames but contour has {}",
            mel.num_frames(),
            contour.len()
        )));
    }
    Ok(())
}

/// Encoder network with its parameters.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub net: EncoderNet,
    pub params: Vec<f32>,
}

/// Utterances per forward pass when encoding many at once.
const ENCODE_CHUNK: usize = 32;

impl EncoderModel {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        let net = EncoderNet::new(cfg)?;
        let params = net.layout.init(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(EncoderModel { net, params })
    }

    pub fn from_params(cfg: EncoderConfig, params: Vec<f32>) -> Result<Self> {
        let net = EncoderNet::new(cfg)?;
        if params.len() != net.parameter_count() {
            return Err(Error::shape(format!(
                "encoder expects {} parameters, got {}",
                net.parameter_count(),
                params.len()
            )));
        }
        Ok(EncoderModel { net, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }

    pub fn encode(&self, mel: &MelSpectrogram, contour: &PitchContour) -> Result<LatentBundle> {
        Ok(self.encode_many(&[(mel, contour)])?.remove(0))
    }

    pub fn encode_many(&self, items: &[(&MelSpectrogram, &PitchContour)]) -> Result<Vec<LatentBundle>> {
        for (m, c) in items {
            check_pair(m, c)?;
        }
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(ENCODE_CHUNK) {
            let mels: Vec<_> = chunk.iter().map(|(m, _)| m.frames().view()).collect();
            let feats: Vec<_> = chunk.iter().map(|(_, c)| c.as_features()).collect();
            let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
            let (mel, lens) = pack(&mels);
            let (pitch, _) = pack(&views);
            out.extend(self.encode_packed(&mel.view(), &pitch.view(), &lens));
        }
        Ok(out)
    }

    /// Encodes a zero-padded batch `[B x T x C]`; frames whose mask is false
    /// are dropped before encoding, so padding never affects the result.
    pub fn encode_padded(
        &self,
        mel: &ArrayView3<f32>,
        pitch: &ArrayView3<f32>,
        mask: &ArrayView2<bool>,
    ) -> Result<Vec<LatentBundle>> {
        let (b, t, _) = mel.dim();
        if pitch.dim().0 != b || pitch.dim().1 != t || mask.dim() != (b, t) {
            return Err(Error::shape("padded inputs and mask disagree"));
        }
        let mut mels = Vec::new();
        let mut pitches = Vec::new();
        let mut lens = Vec::new();
        for i in 0..b {
            let keep: Vec<usize> = (0..t).filter(|&j| mask[[i, j]]).collect();
            if keep.is_empty() {
                return Err(Error::invalid("cannot encode an empty utterance"));
            }
            lens.push(keep.len());
            mels.push(mel.slice(s![i, .., ..]).select(Axis(0), &keep));
            pitches.push(pitch.slice(s![i, .., ..]).select(Axis(0), &keep));
        }
        let mv: Vec<_> = mels.iter().map(|m| m.view()).collect();
        let pv: Vec<_> = pitches.iter().map(|m| m.view()).collect();
        let (m, _) = pack(&mv);
        let (p, _) = pack(&pv);
        Ok(self.encode_packed(&m.view(), &p.view(), &lens))
    }

    pub fn encode_packed(
        &self,
        mel: &ArrayView2<f32>,
        pitch: &ArrayView2<f32>,
        lens: &[usize],
    ) -> Vec<LatentBundle> {
        let pass = self.net.forward(&self.params, mel, pitch, lens);
        let zc = unpack(pass.z_c(), lens);
        let zr = unpack(pass.z_r(), lens);
        let zp = unpack(pass.z_p(), lens);
        zc.into_iter()
            .zip(zr)
            .zip(zp)
            .enumerate()
            .map(|(i, ((z_c, z_r), z_p))| LatentBundle {
                z_c,
                z_r,
                z_p,
                h_c: pass.h.row(i).to_owned(),
                s_r: pass.s_r[i],
                s_p: pass.s_p[i],
            })
            .collect()
    }
}

/// Decoder network with its parameters.
#[derive(Debug, Clone)]
pub struct DecoderModel {
    pub net: DecoderNet,
    pub params: Vec<f32>,
}

impl DecoderModel {
    pub fn new(cfg: DecoderConfig, seed: u64) -> Result<Self> {
        let net = DecoderNet::new(cfg)?;
        let params = net.layout.init(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(DecoderModel { net, params })
    }

    pub fn from_params(cfg: DecoderConfig, params: Vec<f32>) -> Result<Self> {
        let net = DecoderNet::new(cfg)?;
        if params.len() != net.parameter_count() {
            return Err(Error::shape(format!(
                "decoder expects {} parameters, got {}",
                net.parameter_count(),
                params.len()
            )));
        }
        Ok(DecoderModel { net, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }

    pub fn n_speakers(&self) -> usize {
        self.net.cfg.n_speakers
    }

    pub fn decode(
        &self,
        z_c: &ArrayView2<f32>,
        z_r: &ArrayView2<f32>,
        z_p: &ArrayView2<f32>,
        speaker_id: usize,
    ) -> Result<MelSpectrogram> {
        let lens = [z_r.nrows()];
        self.net
            .check_inputs(&lens, [z_c.nrows(), z_r.nrows(), z_p.nrows()], &[speaker_id])?;
        let c = &self.net.cfg;
        let widths = [(z_c.ncols(), c.d_content), (z_r.ncols(), c.d_rhythm), (z_p.ncols(), c.d_pitch)];
        if widths.iter().any(|(a, b)| a != b) {
            return Err(Error::shape("latent widths do not match the decoder"));
        }
        let pass = self.net.forward(&self.params, z_c, z_r, z_p, &lens, &[speaker_id]);
        MelSpectrogram::new(pass.mel)
    }

    pub fn decode_bundle(&self, b: &LatentBundle, speaker_id: usize) -> Result<MelSpectrogram> {
        self.decode(&b.z_c.view(), &b.z_r.view(), &b.z_p.view(), speaker_id)
    }
}
