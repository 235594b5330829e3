//! Rank, contrastive and reconstruction objectives with their gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::signal::MelSpectrogram;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
const D_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPair {
    pub s: f64,
    pub s_aug: f64,
    pub tau: f64,
}

/// Loss and its partial derivatives with respect to `s` and `s_aug`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankGrad {
    pub loss: f64,
    pub ds: f64,
    pub ds_aug: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy between `tau` and `d = sigmoid(s_aug - s)`, with `d`
/// clamped to `[1e-7, 1 - 1e-7]`. A target above 0.5 asks for `s_aug > s`.
pub fn rank_pair_grad(p: &RankPair) -> Result<RankGrad> {
    if !(p.tau > 0.0 && p.tau < 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1), got {}", p.tau)));
    }
    if !(p.s.is_finite() && p.s_aug.is_finite()) {
        return Err(Error::invalid("rank scores must be finite"));
    }
    // Clamping d is the same as clamping the gap at +-logit(1 - 1e-7).
    let limit = ((1.0 - D_CLAMP) / D_CLAMP).ln();
    let gap = p.s_aug - p.s;
    let g = gap.clamp(-limit, limit);
    let loss = p.tau * softplus(-g) + (1.0 - p.tau) * softplus(g);
    let dgap = if gap.abs() > limit { 0.0 } else { sigmoid(g) - p.tau };
    Ok(RankGrad {
        loss,
        ds: -dgap,
        ds_aug: dgap,
    })
}

pub fn rank_pair_loss(p: &RankPair) -> Result<f64> {
    rank_pair_grad(p).map(|g| g.loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveSet {
    pub h: Array1<f64>,
    pub h_aug: Array1<f64>,
    pub negatives: Vec<Array1<f64>>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrad {
    pub loss: f64,
    pub dh: Array1<f64>,
    pub dh_aug: Array1<f64>,
    pub dnegatives: Vec<Array1<f64>>,
}

fn check_unit_or_zero(v: &ArrayView1<f64>) -> Result<()> {
    let n = v.dot(v).sqrt();
    if n > 1e-6 && (n - 1.0).abs() > 1e-3 {
        return Err(Error::invalid(format!(
            "contrastive vectors must be unit-norm or zero, got norm {n}"
        )));
    }
    Ok(())
}

/// `-log softmax` of the positive among `[positive, negatives...]` with
/// logits `<h, v> / t`.
pub fn info_nce_grad(c: &ContrastiveSet) -> Result<ContrastiveGrad> {
    if c.negatives.is_empty() {
        return Err(Error::invalid("infoNCE needs at least one negative"));
    }
    if !(c.temperature > 0.0) {
        return Err(Error::invalid("temperature must be > 0"));
    }
    let dim = c.h.len();
    if c.h_aug.len() != dim || c.negatives.iter().any(|n| n.len() != dim) {
        return Err(Error::shape("contrastive vectors differ in length"));
    }
    check_unit_or_zero(&c.h.view())?;
    check_unit_or_zero(&c.h_aug.view())?;
    for n in &c.negatives {
        check_unit_or_zero(&n.view())?;
    }
    let t = c.temperature;
    let mut logits = Vec::with_capacity(c.negatives.len() + 1);
    logits.push(c.h.dot(&c.h_aug) / t);
    logits.extend(c.negatives.iter().map(|n| c.h.dot(n) / t));
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let lse = m + z.ln();
    let loss = lse - logits[0];
    let probs: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();

    let dl0 = probs[0] - 1.0;
    let mut dh = &c.h_aug * (dl0 / t);
    let mut dnegatives = Vec::with_capacity(c.negatives.len());
    for (n, &p) in c.negatives.iter().zip(&probs[1..]) {
        dh.scaled_add(p / t, n);
        dnegatives.push(&c.h * (p / t));
    }
    Ok(ContrastiveGrad {
        loss,
        dh,
        dh_aug: &c.h * (dl0 / t),
        dnegatives,
    })
}

pub fn info_nce(c: &ContrastiveSet) -> Result<f64> {
    info_nce_grad(c).map(|g| g.loss)
}

/// Unweighted sum of the three stage-one terms.
pub fn encoder_loss(rank_r: f64, rank_p: f64, nce: f64) -> f64 {
    rank_r + rank_p + nce
}

/// Mean squared error over the frames whose mask entry is true (all frames
/// when `mask` is `None`), and `dL/dx_hat`.
pub fn recon_grad(
    x: &ArrayView2<f32>,
    x_hat: &ArrayView2<f32>,
    mask: Option<&[bool]>,
) -> Result<(f64, Array2<f32>)> {
    if x.dim() != x_hat.dim() {
        return Err(Error::shape(format!(
            "reconstruction shapes differ: {:?} vs {:?}",
            x.dim(),
            x_hat.dim()
        )));
    }
    if let Some(m) = mask {
        if m.len() != x.nrows() {
            return Err(Error::shape("mask length differs from frame count"));
        }
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let frames = (0..x.nrows()).filter(|&i| keep(i)).count();
    let count = (frames * x.ncols()) as f64;
    if count == 0.0 {
        return Err(Error::invalid("reconstruction mask selects no entries"));
    }
    let mut sum = 0.0f64;
    let mut grad = Array2::<f32>::zeros(x.dim());
    for i in 0..x.nrows() {
        if !keep(i) {
            continue;
        }
        Zip::from(grad.row_mut(i))
            .and(x.row(i))
            .and(x_hat.row(i))
            .for_each(|g, &a, &b| {
                let d = b as f64 - a as f64;
                sum += d * d;
                *g = (2.0 * d / count) as f32;
            });
    }
    Ok((sum / count, grad))
}

pub fn recon_loss(x: &MelSpectrogram, x_hat: &MelSpectrogram, mask: Option<&[bool]>) -> Result<f64> {
    recon_grad(&x.frames().view(), &x_hat.frames().view(), mask).map(|(l, _)| l)
}
