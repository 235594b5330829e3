//! Content, rhythm and pitch encoders with their pooled heads.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{offsets, BiGru, BiGruCache, Conv1d, ConvCache, Linear};
use super::params::Layout;
use super::Scalar;
use crate::error::{Error, Result};

/// Fixed affine normalization applied to log-mel inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelNorm {
    pub mean: f32,
    pub std: f32,
}

impl Default for MelNorm {
    fn default() -> Self {
        MelNorm {
            mean: -12.0,
            std: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_mels: usize,
    pub conv_channels: usize,
    pub conv_layers: usize,
    pub kernel: usize,
    pub gru_hidden: usize,
    pub d_content: usize,
    pub d_rhythm: usize,
    pub d_pitch: usize,
    pub content_projection: bool,
    /// Subtract each utterance's per-bin mean from the content encoder input.
    #[serde(default)]
    pub content_instance_norm: bool,
    pub mel_norm: MelNorm,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_mels: 80,
            conv_channels: 128,
            conv_layers: 2,
            kernel: 5,
            gru_hidden: 64,
            d_content: 32,
            d_rhythm: 8,
            d_pitch: 8,
            content_projection: true,
            content_instance_norm: true,
            mel_norm: MelNorm::default(),
        }
    }
}

impl EncoderConfig {
    /// A small configuration for gradient checks and fast tests.
    pub fn tiny() -> Self {
        EncoderConfig {
            n_mels: 80,
            conv_channels: 8,
            conv_layers: 2,
            kernel: 5,
            gru_hidden: 8,
            d_content: 6,
            d_rhythm: 3,
            d_pitch: 3,
            content_projection: true,
            content_instance_norm: true,
            mel_norm: MelNorm::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::Config("kernel must be odd".into()));
        }
        if self.n_mels == 0 || self.gru_hidden == 0 || self.d_content == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.d_rhythm == 0 || self.d_pitch == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.conv_layers > 0 && self.conv_channels == 0 {
            return Err(Error::Config("conv_channels must be positive".into()));
        }
        if !(self.mel_norm.std > 0.0) {
            return Err(Error::Config("mel_norm.std must be positive".into()));
        }
        Ok(())
    }
}

/// Conv stack, bidirectional GRU and a per-frame output projection.
#[derive(Debug, Clone)]
pub struct Encoder {
    convs: Vec<Conv1d>,
    gru: BiGru,
    out: Linear,
}

pub struct EncoderCache<F> {
    convs: Vec<ConvCache<F>>,
    gru: BiGruCache<F>,
    pub z: Array2<F>,
}

impl Encoder {
    fn new(l: &mut Layout, name: &str, n_in: usize, cfg: &EncoderConfig, d_out: usize) -> Self {
        l.push_scope(name);
        let mut convs = Vec::new();
        let mut c = n_in;
        for i in 0..cfg.conv_layers {
            convs.push(Conv1d::new(l, &format!("conv{i}"), c, cfg.conv_channels, cfg.kernel));
            c = cfg.conv_channels;
        }
        let gru = BiGru::new(l, "gru", c, cfg.gru_hidden);
        let out = Linear::new(l, "out", gru.n_out(), d_out);
        l.pop_scope();
        Encoder { convs, gru, out }
    }

    fn forward<F: Scalar>(&self, p: &[F], x: &ArrayView2<F>, lens: &[usize]) -> EncoderCache<F> {
        let mut convs: Vec<ConvCache<F>> = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let c = match convs.last() {
                Some(prev) => conv.forward(p, &prev.y.view(), lens),
                None => conv.forward(p, x, lens),
            };
            convs.push(c);
        }
        let gin = convs.last().map(|c| c.y.view()).unwrap_or_else(|| x.view());
        let gru = self.gru.forward(p, &gin, lens);
        let z = self.out.forward(p, &gru.y.view());
        EncoderCache { convs, gru, z }
    }

    fn backward<F: Scalar>(
        &self,
        p: &[F],
        x: &ArrayView2<F>,
        lens: &[usize],
        cache: &EncoderCache<F>,
        dz: &ArrayView2<F>,
        g: &mut [F],
    ) {
        let dg = self
            .out
            .backward(p, &cache.gru.y.view(), dz, g, true)
            .expect("dx requested");
        let gin = cache.convs.last().map(|c| c.y.view()).unwrap_or_else(|| x.view());
        let need = !self.convs.is_empty();
        let mut d = self.gru.backward(p, &gin, lens, &cache.gru, &dg.view(), g, need);
        for i in (0..self.convs.len()).rev() {
            let dy = d.take().expect("gradient flows through the conv stack");
            d = self.convs[i].backward(p, &cache.convs[i], &dy.view(), lens, g, i > 0);
        }
    }
}

/// Per-sequence mean over frames: `[N x D] -> [B x D]`.
pub fn mean_pool<F: Scalar>(z: &ArrayView2<F>, lens: &[usize]) -> Array2<F> {
    let off = offsets(lens);
    let mut out = Array2::zeros((lens.len(), z.ncols()));
    for (b, &len) in lens.iter().enumerate() {
        let seg = z.slice(ndarray::s![off[b]..off[b] + len, ..]);
        let inv = F::one() / F::of(len as f64);
        out.row_mut(b).assign(&(seg.sum_axis(Axis(0)) * inv));
    }
    out
}

/// Removes each sequence's mean frame.
pub fn center_sequences<F: Scalar>(z: &ArrayView2<F>, lens: &[usize]) -> Array2<F> {
    let means = mean_pool(z, lens);
    let off = offsets(lens);
    let mut out = z.to_owned();
    for (b, &len) in lens.iter().enumerate() {
        let mut seg = out.slice_mut(ndarray::s![off[b]..off[b] + len, ..]);
        seg -= &means.row(b);
    }
    out
}

/// Adjoint of [`mean_pool`].
pub fn mean_unpool<F: Scalar>(d: &ArrayView2<F>, lens: &[usize]) -> Array2<F> {
    let n: usize = lens.iter().sum();
    let mut out = Array2::zeros((n, d.ncols()));
    let mut f = 0;
    for (b, &len) in lens.iter().enumerate() {
        let row = d.row(b).mapv(|v| v / F::of(len as f64));
        for _ in 0..len {
            out.row_mut(f).assign(&row);
            f += 1;
        }
    }
    out
}

pub const NORM_FLOOR: f64 = 1e-8;

/// The three encoders, the content projection head and both rank heads.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    pub cfg: EncoderConfig,
    pub layout: Layout,
    content: Encoder,
    rhythm: Encoder,
    pitch: Encoder,
    proj: Option<Linear>,
    rank_r: Linear,
    rank_p: Linear,
}

/// Everything computed by one batched forward pass.
pub struct EncoderPass<F> {
    pub lens: Vec<usize>,
    mel_in: Array2<F>,
    content_in: Array2<F>,
    pitch_in: Array2<F>,
    content: EncoderCache<F>,
    rhythm: EncoderCache<F>,
    pitch: EncoderCache<F>,
    pooled_c: Array2<F>,
    q_norm: Vec<F>,
    pooled_r: Array2<F>,
    pooled_p: Array2<F>,
    /// `[B x D_c]`
    pub h: Array2<F>,
    pub s_r: Array1<F>,
    pub s_p: Array1<F>,
}

impl<F: Scalar> EncoderPass<F> {
    pub fn z_c(&self) -> &Array2<F> {
        &self.content.z
    }

    pub fn z_r(&self) -> &Array2<F> {
        &self.rhythm.z
    }

    pub fn z_p(&self) -> &Array2<F> {
        &self.pitch.z
    }
}

/// Upstream gradients for [`EncoderNet::backward`]; absent entries are zero.
#[derive(Default)]
pub struct EncoderGrads<F> {
    pub z_c: Option<Array2<F>>,
    pub z_r: Option<Array2<F>>,
    pub z_p: Option<Array2<F>>,
    pub h: Option<Array2<F>>,
    pub s_r: Option<Array1<F>>,
    pub s_p: Option<Array1<F>>,
}

impl EncoderNet {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut l = Layout::new();
        let content = Encoder::new(&mut l, "content", cfg.n_mels, &cfg, cfg.d_content);
        let rhythm = Encoder::new(&mut l, "rhythm", cfg.n_mels, &cfg, cfg.d_rhythm);
        let pitch = Encoder::new(&mut l, "pitch", 2, &cfg, cfg.d_pitch);
        let proj = cfg
            .content_projection
            .then(|| Linear::new(&mut l, "content_head", cfg.d_content, cfg.d_content));
        let rank_r = Linear::new(&mut l, "rank_rhythm", cfg.d_rhythm, 1);
        let rank_p = Linear::new(&mut l, "rank_pitch", cfg.d_pitch, 1);
        Ok(EncoderNet {
            cfg,
            layout: l,
            content,
            rhythm,
            pitch,
            proj,
            rank_r,
            rank_p,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.layout.len()
    }

    /// `mel` is `[N x n_mels]` raw log-mel, `pitch` is `[N x 2]` (contour, voiced).
    pub fn forward<F: Scalar>(
        &self,
        p: &[F],
        mel: &ArrayView2<F>,
        pitch: &ArrayView2<F>,
        lens: &[usize],
    ) -> EncoderPass<F> {
        let norm = self.cfg.mel_norm;
        let (mu, inv) = (F::of(norm.mean as f64), F::one() / F::of(norm.std as f64));
        let mel_in = mel.mapv(|v| (v - mu) * inv);
        let pitch_in = pitch.to_owned();
        let content_in = if self.cfg.content_instance_norm {
            center_sequences(&mel_in.view(), lens)
        } else {
            mel_in.clone()
        };
        let content = self.content.forward(p, &content_in.view(), lens);
        let rhythm = self.rhythm.forward(p, &mel_in.view(), lens);
        let pitch_c = self.pitch.forward(p, &pitch_in.view(), lens);

        let pooled_c = mean_pool(&content.z.view(), lens);
        let q = match &self.proj {
            Some(l) => l.forward(p, &pooled_c.view()),
            None => pooled_c.clone(),
        };
        let mut h = q;
        let mut q_norm = Vec::with_capacity(lens.len());
        for mut row in h.rows_mut() {
            let n = row.iter().map(|&v| v * v).sum::<F>().sqrt();
            q_norm.push(n);
            if n.to_f64() < NORM_FLOOR {
                row.fill(F::zero());
            } else {
                row.mapv_inplace(|v| v / n);
            }
        }
        let pooled_r = mean_pool(&rhythm.z.view(), lens);
        let pooled_p = mean_pool(&pitch_c.z.view(), lens);
        let s_r = self.rank_r.forward(p, &pooled_r.view()).column(0).to_owned();
        let s_p = self.rank_p.forward(p, &pooled_p.view()).column(0).to_owned();
        EncoderPass {
            lens: lens.to_vec(),
            mel_in,
            content_in,
            pitch_in,
            content,
            rhythm,
            pitch: pitch_c,
            pooled_c,
            q_norm,
            pooled_r,
            pooled_p,
            h,
            s_r,
            s_p,
        }
    }

    pub fn backward<F: Scalar>(&self, p: &[F], pass: &EncoderPass<F>, up: &EncoderGrads<F>) -> Vec<F> {
        let mut g = vec![F::zero(); self.layout.len()];
        let lens = &pass.lens;
        let n: usize = lens.iter().sum();
        let b = lens.len();

        // Content: normalization -> projection -> mean pool, plus direct z_c.
        let mut dz_c = up
            .z_c
            .clone()
            .unwrap_or_else(|| Array2::zeros((n, self.cfg.d_content)));
        if let Some(dh) = &up.h {
            let mut dq = Array2::zeros((b, self.cfg.d_content));
            for i in 0..b {
                let nq = pass.q_norm[i];
                if nq.to_f64() < NORM_FLOOR {
                    continue;
                }
                let h = pass.h.row(i);
                let d = dh.row(i);
                let dot = h.iter().zip(d.iter()).map(|(&a, &c)| a * c).sum::<F>();
                for j in 0..self.cfg.d_content {
                    dq[[i, j]] = (d[j] - h[j] * dot) / nq;
                }
            }
            let dpool = match &self.proj {
                Some(l) => l
                    .backward(p, &pass.pooled_c.view(), &dq.view(), &mut g, true)
                    .expect("dx requested"),
                None => dq,
            };
            dz_c += &mean_unpool(&dpool.view(), lens);
        }
        self.content
            .backward(p, &pass.content_in.view(), lens, &pass.content, &dz_c.view(), &mut g);

        let head = |lin: &Linear,
                    pooled: &Array2<F>,
                    ds: &Option<Array1<F>>,
                    dz: &Option<Array2<F>>,
                    d: usize,
                    g: &mut Vec<F>| {
            let mut out = dz.clone().unwrap_or_else(|| Array2::zeros((n, d)));
            if let Some(ds) = ds {
                let ds2 = ds.view().insert_axis(Axis(1));
                let dpool = lin
                    .backward(p, &pooled.view(), &ds2, g, true)
                    .expect("dx requested");
                out += &mean_unpool(&dpool.view(), lens);
            }
            out
        };
        let dz_r = head(&self.rank_r, &pass.pooled_r, &up.s_r, &up.z_r, self.cfg.d_rhythm, &mut g);
        self.rhythm
            .backward(p, &pass.mel_in.view(), lens, &pass.rhythm, &dz_r.view(), &mut g);
        let dz_p = head(&self.rank_p, &pass.pooled_p, &up.s_p, &up.z_p, self.cfg.d_pitch, &mut g);
        self.pitch
            .backward(p, &pass.pitch_in.view(), lens, &pass.pitch, &dz_p.view(), &mut g);
        g
    }
}
