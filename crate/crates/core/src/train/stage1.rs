use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;

use super::adam::clip_global_norm;
use super::bundle::{ModelBundle, TrainState};
use super::config::{Stage, TrainConfig};
use super::{nonfinite, TrainLogRecord};
use crate::data::{build_batch, crop_example, Batch, Corpus};
use crate::error::{Error, Result};
use crate::losses::{info_nce_grad, rank_pair_grad, ContrastiveSet, RankPair, DEFAULT_TEMPERATURE};
use crate::nets::{pack, EncoderGrads, EncoderNet};

/// Loss terms and parameter gradient of one stage-one batch.
pub struct EncoderStep {
    pub rank_r: f64,
    pub rank_p: f64,
    pub nce: f64,
    pub grad: Vec<f32>,
}

impl EncoderStep {
    pub fn loss(&self) -> f64 {
        self.rank_r + self.rank_p + self.nce
    }
}

/// Batch-mean encoder loss and its gradient. Originals occupy rows `0..B`
/// of the packed input and their augmentations rows `B..2B`.
pub fn encoder_step(net: &EncoderNet, params: &[f32], batch: &Batch) -> Result<EncoderStep> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::invalid("batch size must be at least 2"));
    }
    let mut mels = Vec::with_capacity(2 * b);
    let mut feats = Vec::with_capacity(2 * b);
    for e in &batch.examples {
        mels.push(e.mel.frames().view());
        feats.push(e.contour.as_features());
    }
    for e in &batch.examples {
        mels.push(e.mel_aug.frames().view());
        feats.push(e.contour_aug.as_features());
    }
    let fviews: Vec<_> = feats.iter().map(|f| f.view()).collect();
    let (mel, lens) = pack(&mels);
    let (pitch, _) = pack(&fviews);
    let pass = net.forward(params, &mel.view(), &pitch.view(), &lens);

    let inv_b = 1.0 / b as f64;
    let mut ds_r = Array1::<f32>::zeros(2 * b);
    let mut ds_p = Array1::<f32>::zeros(2 * b);
    let mut dh = Array2::<f32>::zeros(pass.h.dim());
    let (mut rank_r, mut rank_p, mut nce) = (0.0, 0.0, 0.0);
    let h64: Vec<Array1<f64>> = pass.h.rows().into_iter().map(|r| r.mapv(f64::from)).collect();
    for (i, e) in batch.examples.iter().enumerate() {
        let gr = rank_pair_grad(&RankPair {
            s: pass.s_r[i] as f64,
            s_aug: pass.s_r[b + i] as f64,
            tau: e.spec.tau_r,
        })?;
        let gp = rank_pair_grad(&RankPair {
            s: pass.s_p[i] as f64,
            s_aug: pass.s_p[b + i] as f64,
            tau: e.spec.tau_p,
        })?;
        rank_r += gr.loss * inv_b;
        rank_p += gp.loss * inv_b;
        ds_r[i] += (gr.ds * inv_b) as f32;
        ds_r[b + i] += (gr.ds_aug * inv_b) as f32;
        ds_p[i] += (gp.ds * inv_b) as f32;
        ds_p[b + i] += (gp.ds_aug * inv_b) as f32;

        let others: Vec<usize> = (0..b).filter(|&j| j != i).collect();
        let gc = info_nce_grad(&ContrastiveSet {
            h: h64[i].clone(),
            h_aug: h64[b + i].clone(),
            negatives: others.iter().map(|&j| h64[j].clone()).collect(),
            temperature: DEFAULT_TEMPERATURE,
        })?;
        nce += gc.loss * inv_b;
        let mut add = |row: usize, g: &Array1<f64>| {
            dh.row_mut(row)
                .zip_mut_with(g, |d, &v| *d += (v * inv_b) as f32)
        };
        add(i, &gc.dh);
        add(b + i, &gc.dh_aug);
        for (&j, g) in others.iter().zip(&gc.dnegatives) {
            add(j, g);
        }
    }
    let grad = net.backward(
        params,
        &pass,
        &EncoderGrads {
            h: Some(dh),
            s_r: Some(ds_r),
            s_p: Some(ds_p),
            ..Default::default()
        },
    );
    Ok(EncoderStep {
        rank_r,
        rank_p,
        nce,
        grad,
    })
}

/// Runs stage one until `cfg.iterations` have been completed in total. A
/// bundle that already carries stage-one state with the same seed resumes
/// from it; otherwise optimization starts fresh. `hook` sees the bundle
/// after every iteration.
pub fn train_encoders(
    bundle: &mut ModelBundle,
    corpus: &Corpus,
    cfg: &TrainConfig,
    hook: &mut dyn FnMut(&ModelBundle, &TrainLogRecord) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if cfg.stage != Stage::Encoders {
        return Err(Error::Config("train_encoders needs stage = \"encoders\"".into()));
    }
    bundle.check_corpus(corpus)?;
    let n = bundle.encoder.parameter_count();
    let mut state = match bundle.encoder_train.take() {
        Some(s) if s.cfg.seed == cfg.seed => TrainState { cfg: *cfg, ..s },
        _ => TrainState::fresh(*cfg, n),
    };
    state.adam.lr = cfg.learning_rate;
    bundle.encoder_train = Some(state);
    let start = Instant::now();
    let aug = bundle.augmentation;
    loop {
        let ModelBundle {
            encoder,
            encoder_train,
            speaker_stats,
            ..
        } = &mut *bundle;
        let state = encoder_train.as_mut().expect("state installed above");
        if state.iteration >= cfg.iterations {
            break;
        }
        let mut batch = build_batch(corpus, speaker_stats, &mut state.rng, cfg.batch_size, &aug)?;
        if cfg.crop_frames > 0 {
            for e in &mut batch.examples {
                crop_example(e, cfg.crop_frames, state.rng.random())?;
            }
        }
        let mut step = encoder_step(&encoder.net, &encoder.params, &batch)?;
        let grad_norm = clip_global_norm(&mut step.grad, cfg.clip_norm);
        let rec = TrainLogRecord {
            stage: Stage::Encoders,
            iteration: state.iteration + 1,
            loss: step.loss(),
            rank_r: Some(step.rank_r),
            rank_p: Some(step.rank_p),
            nce: Some(step.nce),
            recon: None,
            grad_norm,
            wall_time: start.elapsed().as_secs_f64(),
        };
        if !rec.is_finite() {
            return Err(nonfinite(&rec));
        }
        state.adam.step(&mut encoder.params, &step.grad);
        state.iteration += 1;
        hook(bundle, &rec)?;
    }
    Ok(())
}
