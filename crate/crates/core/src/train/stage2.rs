use std::time::Instant;

use rand::seq::index::sample;

use super::adam::clip_global_norm;
use super::bundle::{ModelBundle, TrainState};
use super::config::{Stage, TrainConfig};
use super::{nonfinite, TrainLogRecord};
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::losses::recon_grad;
use crate::nets::{pack, DecoderConfig, DecoderNet, LatentBundle};

/// Frozen-encoder latents of every corpus utterance.
pub fn encode_corpus(bundle: &ModelBundle, corpus: &Corpus) -> Result<Vec<LatentBundle>> {
    let contours = corpus
        .utterances
        .iter()
        .enumerate()
        .map(|(i, u)| corpus.features(i).contour(bundle.stats(u.speaker_id)?))
        .collect::<Result<Vec<_>>>()?;
    let items: Vec<_> = (0..corpus.len())
        .map(|i| (&corpus.features(i).mel, &contours[i]))
        .collect();
    bundle.encoder.encode_many(&items)
}

/// Mean reconstruction loss of a batch of utterances and the decoder gradient.
pub fn decoder_step(
    net: &DecoderNet,
    params: &[f32],
    latents: &[&LatentBundle],
    targets: &[ndarray::ArrayView2<f32>],
    speakers: &[usize],
) -> Result<(f64, Vec<f32>)> {
    let zc: Vec<_> = latents.iter().map(|l| l.z_c.view()).collect();
    let zr: Vec<_> = latents.iter().map(|l| l.z_r.view()).collect();
    let zp: Vec<_> = latents.iter().map(|l| l.z_p.view()).collect();
    let (zc, lens) = pack(&zc);
    let (zr, _) = pack(&zr);
    let (zp, _) = pack(&zp);
    let (x, tlens) = pack(targets);
    if tlens != lens {
        return Err(Error::shape("latent and target frame counts differ"));
    }
    net.check_inputs(&lens, [zc.nrows(), zr.nrows(), zp.nrows()], speakers)?;
    let pass = net.forward(params, &zc.view(), &zr.view(), &zp.view(), &lens, speakers);
    let (loss, dmel) = recon_grad(&x.view(), &pass.mel.view(), None)?;
    let (grad, _) = net.backward(params, &pass, &dmel.view(), false);
    Ok((loss, grad))
}

/// Runs stage two with the encoder frozen. Adds a decoder built from
/// `decoder_cfg` when the bundle has none; resumes like
/// [`super::train_encoders`].
pub fn train_decoder(
    bundle: &mut ModelBundle,
    corpus: &Corpus,
    cfg: &TrainConfig,
    decoder_cfg: DecoderConfig,
    hook: &mut dyn FnMut(&ModelBundle, &TrainLogRecord) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if cfg.stage != Stage::Decoder {
        return Err(Error::Config("train_decoder needs stage = \"decoder\"".into()));
    }
    bundle.check_corpus(corpus)?;
    if corpus.len() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "batch of {} needs at least that many utterances, corpus has {}",
            cfg.batch_size,
            corpus.len()
        )));
    }
    bundle.ensure_decoder(decoder_cfg, cfg.seed.wrapping_add(1))?;
    let n = bundle.decoder()?.parameter_count();
    let mut state = match bundle.decoder_train.take() {
        Some(s) if s.cfg.seed == cfg.seed => TrainState { cfg: *cfg, ..s },
        _ => TrainState::fresh(*cfg, n),
    };
    state.adam.lr = cfg.learning_rate;
    bundle.decoder_train = Some(state);
    let latents = encode_corpus(bundle, corpus)?;
    let start = Instant::now();
    loop {
        let ModelBundle {
            decoder,
            decoder_train,
            ..
        } = &mut *bundle;
        let state = decoder_train.as_mut().expect("state installed above");
        let decoder = decoder.as_mut().expect("decoder installed above");
        if state.iteration >= cfg.iterations {
            break;
        }
        let picks = sample(&mut state.rng, corpus.len(), cfg.batch_size).into_vec();
        let lat: Vec<_> = picks.iter().map(|&i| &latents[i]).collect();
        let targets: Vec<_> = picks.iter().map(|&i| corpus.features(i).mel.frames().view()).collect();
        let speakers: Vec<_> = picks.iter().map(|&i| corpus.utterances[i].speaker_id).collect();
        let (loss, mut grad) = decoder_step(&decoder.net, &decoder.params, &lat, &targets, &speakers)?;
        let grad_norm = clip_global_norm(&mut grad, cfg.clip_norm);
        let rec = TrainLogRecord {
            stage: Stage::Decoder,
            iteration: state.iteration + 1,
            loss,
            rank_r: None,
            rank_p: None,
            nce: None,
            recon: Some(loss),
            grad_norm,
            wall_time: start.elapsed().as_secs_f64(),
        };
        if !rec.is_finite() {
            return Err(nonfinite(&rec));
        }
        state.adam.step(&mut decoder.params, &grad);
        state.iteration += 1;
        hook(bundle, &rec)?;
    }
    Ok(())
}
