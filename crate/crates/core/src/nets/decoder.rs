//! Mel decoder conditioned on a speaker embedding table.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::encoder::MelNorm;
use super::layers::{BiGru, BiGruCache, Linear};
use super::params::{Init, Layout, Slot};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub d_content: usize,
    pub d_rhythm: usize,
    pub d_pitch: usize,
    pub n_speakers: usize,
    pub speaker_dim: usize,
    pub pre_dim: usize,
    pub gru_hidden: usize,
    pub n_mels: usize,
    pub mel_norm: MelNorm,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            d_content: 32,
            d_rhythm: 8,
            d_pitch: 8,
            n_speakers: 8,
            speaker_dim: 16,
            pre_dim: 256,
            gru_hidden: 128,
            n_mels: 80,
            mel_norm: MelNorm::default(),
        }
    }
}

impl DecoderConfig {
    pub fn tiny(n_speakers: usize) -> Self {
        DecoderConfig {
            d_content: 6,
            d_rhythm: 3,
            d_pitch: 3,
            n_speakers,
            speaker_dim: 4,
            pre_dim: 8,
            gru_hidden: 8,
            n_mels: 80,
            mel_norm: MelNorm::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 {
            return Err(Error::Config("decoder needs at least one speaker".into()));
        }
        if self.pre_dim == 0 || self.gru_hidden == 0 || self.n_mels == 0 {
            return Err(Error::Config("decoder dimensions must be positive".into()));
        }
        if !(self.mel_norm.std > 0.0) {
            return Err(Error::Config("mel_norm.std must be positive".into()));
        }
        Ok(())
    }

    fn d_latent(&self) -> usize {
        self.d_content + self.d_rhythm + self.d_pitch
    }
}

/// Input projection with ReLU, bidirectional GRU, output projection.
#[derive(Debug, Clone)]
pub struct DecoderNet {
    pub cfg: DecoderConfig,
    pub layout: Layout,
    pub speakers: Slot,
    pre: Linear,
    gru: BiGru,
    out: Linear,
}

pub struct DecoderPass<F> {
    lens: Vec<usize>,
    speaker_of_frame: Vec<usize>,
    input: Array2<F>,
    pre: Array2<F>,
    gru: BiGruCache<F>,
    /// `[N x n_mels]` in log-mel units.
    pub mel: Array2<F>,
}

/// Gradients with respect to the decoder's latent inputs.
pub struct LatentGrads<F> {
    pub z_c: Array2<F>,
    pub z_r: Array2<F>,
    pub z_p: Array2<F>,
}

impl DecoderNet {
    pub fn new(cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut l = Layout::new();
        let speakers = l.matrix("speaker_table", cfg.n_speakers, cfg.speaker_dim, Init::Normal(0.1));
        let pre = Linear::new(&mut l, "pre", cfg.d_latent() + cfg.speaker_dim, cfg.pre_dim);
        let gru = BiGru::new(&mut l, "gru", cfg.pre_dim, cfg.gru_hidden);
        let out = Linear::new(&mut l, "out", gru.n_out(), cfg.n_mels);
        Ok(DecoderNet {
            cfg,
            layout: l,
            speakers,
            pre,
            gru,
            out,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.layout.len()
    }

    /// Hidden-to-hidden GRU weights only.
    pub fn recurrent_core_count(&self) -> usize {
        self.gru.fwd.wh.len() + self.gru.bwd.wh.len()
    }

    pub fn check_inputs(&self, lens: &[usize], n: [usize; 3], speakers: &[usize]) -> Result<()> {
        let total: usize = lens.iter().sum();
        if n.iter().any(|&r| r != total) {
            return Err(Error::shape(format!(
                "latent sequences have {n:?} frames but lengths sum to {total}"
            )));
        }
        if speakers.len() != lens.len() {
            return Err(Error::shape("one speaker id per sequence required"));
        }
        if let Some(&s) = speakers.iter().find(|&&s| s >= self.cfg.n_speakers) {
            return Err(Error::invalid(format!(
                "speaker {s} outside table of {}",
                self.cfg.n_speakers
            )));
        }
        if lens.contains(&0) {
            return Err(Error::invalid("empty latent sequence"));
        }
        Ok(())
    }

    /// Inputs must already satisfy [`DecoderNet::check_inputs`].
    pub fn forward<F: Scalar>(
        &self,
        p: &[F],
        z_c: &ArrayView2<F>,
        z_r: &ArrayView2<F>,
        z_p: &ArrayView2<F>,
        lens: &[usize],
        speakers: &[usize],
    ) -> DecoderPass<F> {
        let table = self.speakers.mat(p);
        let speaker_of_frame: Vec<usize> = lens
            .iter()
            .zip(speakers)
            .flat_map(|(&l, &s)| std::iter::repeat_n(s, l))
            .collect();
        let emb = table.select(Axis(0), &speaker_of_frame);
        let input = ndarray::concatenate(Axis(1), &[z_c.view(), z_r.view(), z_p.view(), emb.view()])
            .expect("frame counts checked");
        let mut pre = self.pre.forward(p, &input.view());
        pre.mapv_inplace(|v| v.max(F::zero()));
        let gru = self.gru.forward(p, &pre.view(), lens);
        let norm = self.cfg.mel_norm;
        let (mu, sd) = (F::of(norm.mean as f64), F::of(norm.std as f64));
        let mel = self.out.forward(p, &gru.y.view()).mapv(|v| v * sd + mu);
        DecoderPass {
            lens: lens.to_vec(),
            speaker_of_frame,
            input,
            pre,
            gru,
            mel,
        }
    }

    /// Gradient of the loss with respect to decoder parameters (and, if asked,
    /// the latent inputs), given `dmel = dL/dmel`.
    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        pass: &DecoderPass<F>,
        dmel: &ArrayView2<F>,
        need_latents: bool,
    ) -> (Vec<F>, Option<LatentGrads<F>>) {
        let mut g = vec![F::zero(); self.layout.len()];
        let sd = F::of(self.cfg.mel_norm.std as f64);
        let dy = dmel.mapv(|v| v * sd);
        let dgru = self
            .out
            .backward(p, &pass.gru.y.view(), &dy.view(), &mut g, true)
            .expect("dx requested");
        let mut dpre = self
            .gru
            .backward(p, &pass.pre.view(), &pass.lens, &pass.gru, &dgru.view(), &mut g, true)
            .expect("dx requested");
        ndarray::Zip::from(&mut dpre).and(&pass.pre).for_each(|d, &y| {
            if y <= F::zero() {
                *d = F::zero();
            }
        });
        let din = self
            .pre
            .backward(p, &pass.input.view(), &dpre.view(), &mut g, true)
            .expect("dx requested");
        let c = &self.cfg;
        let e0 = c.d_latent();
        {
            let mut table = self.speakers.mat_mut(&mut g);
            for (f, &s) in pass.speaker_of_frame.iter().enumerate() {
                let mut row = table.row_mut(s);
                row += &din.slice(s![f, e0..e0 + c.speaker_dim]);
            }
        }
        let lat = need_latents.then(|| LatentGrads {
            z_c: din.slice(s![.., ..c.d_content]).to_owned(),
            z_r: din.slice(s![.., c.d_content..c.d_content + c.d_rhythm]).to_owned(),
            z_p: din.slice(s![.., c.d_content + c.d_rhythm..e0]).to_owned(),
        });
        (g, lat)
    }
}
