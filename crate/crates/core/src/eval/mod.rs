//! Objective evaluation: log-F0 correlation, conversion-rate probes and
//! disentanglement probes on the latents.

mod plot;
mod probe;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use plot::{bar_chart_svg, write_plots};
pub use probe::{PresenceProbe, SoftmaxProbe};

use crate::convert::{convert_latents, synthesize, ConversionCombination};
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::nets::LatentBundle;
use crate::signal::{estimate_f0, pcc, spearman, F0Track, MelSpectrogram, Waveform};
use crate::train::{encode_corpus, ModelBundle};

/// Fewest frames voiced in both tracks for a log-F0 correlation.
pub const MIN_JOINT_VOICED: usize = 10;
/// Reference values closer than this relative margin cannot be told apart.
pub const DECIDABLE_MARGIN: f64 = 0.05;
pub const MIN_PROBE_UTTERANCES: usize = 200;

pub fn pcc_tracks(a: &F0Track, b: &F0Track) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "log-F0 correlation needs equal lengths, got {} and {} frames",
            a.len(),
            b.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = (0..a.len())
        .filter(|&i| a.voiced[i] && b.voiced[i])
        .map(|i| (a.f0_hz[i].ln(), b.f0_hz[i].ln()))
        .unzip();
    if x.len() < MIN_JOINT_VOICED {
        return Err(Error::invalid(format!(
            "only {} jointly voiced frames (need {MIN_JOINT_VOICED})",
            x.len()
        )));
    }
    pcc(&x, &y)
}

/// Pearson correlation of raw log-F0 over frames voiced in both signals.
pub fn pcc_logf0(converted: &Waveform, reference: &Waveform) -> Result<f64> {
    pcc_tracks(&estimate_f0(converted), &estimate_f0(reference))
}

/// Source and target utterance indices into a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub source: usize,
    pub target: usize,
}

/// `n` random pairs whose speakers differ.
pub fn sample_pairs(corpus: &Corpus, n: usize, seed: u64) -> Result<Vec<EvalPair>> {
    let spk: Vec<usize> = corpus.utterances.iter().map(|u| u.speaker_id).collect();
    if spk.iter().all(|&s| s == spk[0]) {
        return Err(Error::invalid("pairs need at least two speakers"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = rng.random_range(0..corpus.len());
        let t = rng.random_range(0..corpus.len());
        if spk[s] != spk[t] {
            out.push(EvalPair { source: s, target: t });
        }
    }
    Ok(out)
}

/// A trained model bound to a corpus, with every utterance pre-encoded and a
/// reference speaker classifier fitted on mean log-mel frames.
pub struct Evaluator<'a> {
    pub model: &'a ModelBundle,
    pub corpus: &'a Corpus,
    latents: Vec<LatentBundle>,
    timbre: SoftmaxProbe,
}

fn mean_frame(m: &MelSpectrogram) -> Vec<f64> {
    m.mean_frame().into_iter().map(f64::from).collect()
}

fn rows(v: &[Vec<f64>]) -> Array2<f64> {
    let d = v.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((v.len(), d), |(i, j)| v[i][j])
}

/// The three measurable outcomes of a conversion.
struct Measured {
    median_hz: Option<f64>,
    frames: usize,
    speaker_posterior: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a ModelBundle, corpus: &'a Corpus) -> Result<Self> {
        model.check_corpus(corpus)?;
        model.decoder()?;
        let latents = encode_corpus(model, corpus)?;
        let feats: Vec<Vec<f64>> = (0..corpus.len())
            .map(|i| mean_frame(&corpus.features(i).mel))
            .collect();
        let labels: Vec<usize> = corpus.utterances.iter().map(|u| u.speaker_id).collect();
        let timbre = SoftmaxProbe::fit(&rows(&feats).view(), &labels, corpus.n_speakers)?;
        Ok(Evaluator {
            model,
            corpus,
            latents,
            timbre,
        })
    }

    fn speaker(&self, i: usize) -> usize {
        self.corpus.utterances[i].speaker_id
    }

    pub fn convert(&self, pair: EvalPair, combo: ConversionCombination) -> Result<MelSpectrogram> {
        convert_latents(
            self.model,
            (&self.latents[pair.source], self.speaker(pair.source)),
            (&self.latents[pair.target], self.speaker(pair.target)),
            combo,
        )
    }

    pub fn reconstruct(&self, i: usize) -> Result<MelSpectrogram> {
        self.model
            .decoder()?
            .decode_bundle(&self.latents[i], self.speaker(i))
    }

    /// Median F0 expected from moving the target's relative pitch onto the
    /// output speaker.
    fn predicted_pitch(&self, pair: EvalPair, combo: ConversionCombination) -> Result<Option<f64>> {
        let tgt = self.speaker(pair.target);
        let out_spk = if combo.convert_timbre { tgt } else { self.speaker(pair.source) };
        let contour = self
            .corpus
            .features(pair.target)
            .contour(self.model.stats(tgt)?)?;
        Ok(match contour.median_voiced() {
            Some(z) => Some(self.model.stats(out_spk)?.hz_for(z)),
            None => None,
        })
    }

    fn measure(&self, mel: &MelSpectrogram) -> Result<Measured> {
        let f0 = estimate_f0(&synthesize(mel)?);
        let post = self.timbre.posteriors(&rows(&[mean_frame(mel)]).view());
        Ok(Measured {
            median_hz: f0.median_voiced_hz(),
            frames: mel.num_frames(),
            speaker_posterior: post.row(0).to_vec(),
        })
    }

    /// Per-component target/source reference values, or `None` when the pair
    /// cannot discriminate this combination.
    fn references(&self, pair: EvalPair, combo: ConversionCombination) -> Result<Option<References>> {
        let far = |a: f64, b: f64| (a / b - 1.0).abs() >= DECIDABLE_MARGIN;
        let mut r = References::default();
        if combo.convert_pitch {
            let src = self.corpus.features(pair.source).f0.median_voiced_hz();
            match (self.predicted_pitch(pair, combo)?, src) {
                (Some(t), Some(s)) if far(t, s) => r.pitch = Some((t, s)),
                _ => return Ok(None),
            }
        }
        if combo.convert_rhythm {
            let t = self.corpus.features(pair.target).mel.num_frames() as f64;
            let s = self.corpus.features(pair.source).mel.num_frames() as f64;
            if !far(t, s) {
                return Ok(None);
            }
            r.frames = Some((t, s));
        }
        if combo.convert_timbre {
            let (t, s) = (self.speaker(pair.target), self.speaker(pair.source));
            if t == s {
                return Ok(None);
            }
            r.speakers = Some((t, s));
        }
        Ok(Some(r))
    }

    pub fn is_decidable(&self, pair: EvalPair, combo: ConversionCombination) -> Result<bool> {
        Ok(self.references(pair, combo)?.is_some())
    }

    /// Draws random cross-speaker pairs until `n` are decidable for `combo`.
    pub fn decidable_pairs(&self, combo: ConversionCombination, n: usize, seed: u64) -> Result<Vec<EvalPair>> {
        let mut out = Vec::with_capacity(n);
        let mut k = 0u64;
        while out.len() < n {
            if k > 1000 + 100 * n as u64 {
                return Err(Error::invalid(format!("could not find {n} decidable pairs for {combo}")));
            }
            let p = sample_pairs(self.corpus, 1, seed.wrapping_add(k))?[0];
            if self.is_decidable(p, combo)? {
                out.push(p);
            }
            k += 1;
        }
        Ok(out)
    }

    /// Counts, per converted component, whether the measurement on `mel`
    /// lies closer to the target reference than to the source reference.
    fn decide(&self, refs: &References, mel: &MelSpectrogram) -> Result<(usize, usize)> {
        let m = self.measure(mel)?;
        let closer = |x: f64, (t, s): (f64, f64)| (x.ln() - t.ln()).abs() < (x.ln() - s.ln()).abs();
        let mut hits = 0;
        let mut total = 0;
        if let Some(p) = refs.pitch {
            total += 1;
            hits += m.median_hz.is_some_and(|hz| closer(hz, p)) as usize;
        }
        if let Some(f) = refs.frames {
            total += 1;
            hits += closer(m.frames as f64, f) as usize;
        }
        if let Some((t, s)) = refs.speakers {
            total += 1;
            hits += (m.speaker_posterior[t] > m.speaker_posterior[s]) as usize;
        }
        Ok((hits, total))
    }

    /// Fraction of component decisions on decidable pairs that favor the
    /// target. Undecidable pairs are skipped and counted.
    pub fn objective_conversion_rate(
        &self,
        pairs: &[EvalPair],
        combo: ConversionCombination,
    ) -> Result<ConversionRate> {
        self.rate_with(pairs, combo, |p| self.convert(p, combo))
    }

    /// Same protocol with an arbitrary producer of the converted mel.
    pub fn rate_with(
        &self,
        pairs: &[EvalPair],
        combo: ConversionCombination,
        produce: impl Fn(EvalPair) -> Result<MelSpectrogram> + Sync,
    ) -> Result<ConversionRate> {
        let outcomes = pairs
            .par_iter()
            .map(|&p| match self.references(p, combo)? {
                Some(r) => self.decide(&r, &produce(p)?).map(Some),
                None => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        let decided: Vec<(usize, usize)> = outcomes.iter().flatten().copied().collect();
        if decided.is_empty() {
            return Err(Error::invalid(format!("no decidable pairs for {combo}")));
        }
        let hits: usize = decided.iter().map(|d| d.0).sum();
        let total: usize = decided.iter().map(|d| d.1).sum();
        Ok(ConversionRate {
            rate: hits as f64 / total as f64,
            decided_pairs: decided.len(),
            undecidable_pairs: pairs.len() - decided.len(),
        })
    }

    /// Mean log-F0 correlation of converted speech against whichever of
    /// source and target has the same length, plus a reconstruction control.
    pub fn pcc_protocol(&self, pairs: &[EvalPair]) -> Result<BTreeMap<String, PccRow>> {
        if pairs.is_empty() {
            return Err(Error::invalid("the correlation protocol needs pairs"));
        }
        let f0 = |i: usize| &self.corpus.features(i).f0;
        let mut table = BTreeMap::new();
        let control: Vec<PairPcc> = pairs
            .par_iter()
            .map(|p| {
                let out = estimate_f0(&synthesize(&self.reconstruct(p.source)?)?);
                Ok(PairPcc {
                    vs_source: pcc_tracks(&out, f0(p.source)).ok(),
                    vs_target: None,
                })
            })
            .collect::<Result<_>>()?;
        table.insert(RECONSTRUCT.to_string(), PccRow::aggregate(&control));
        for combo in ConversionCombination::all() {
            let per: Vec<PairPcc> = pairs
                .par_iter()
                .map(|&p| {
                    let out = estimate_f0(&synthesize(&self.convert(p, combo)?)?);
                    Ok(PairPcc {
                        vs_source: pcc_tracks(&out, f0(p.source)).ok(),
                        vs_target: pcc_tracks(&out, f0(p.target)).ok(),
                    })
                })
                .collect::<Result<_>>()?;
            table.insert(combo.label(), PccRow::aggregate(&per));
        }
        Ok(table)
    }
}

pub const RECONSTRUCT: &str = "Reconstruct";

#[derive(Debug, Default, Clone, Copy)]
struct References {
    pitch: Option<(f64, f64)>,
    frames: Option<(f64, f64)>,
    speakers: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversionRate {
    pub rate: f64,
    pub decided_pairs: usize,
    pub undecidable_pairs: usize,
}

struct PairPcc {
    vs_source: Option<f64>,
    vs_target: Option<f64>,
}

/// Mean correlation over the pairs for which it was computable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PccRow {
    pub vs_source: Option<f64>,
    pub vs_target: Option<f64>,
    pub n_source: usize,
    pub n_target: usize,
    /// Pairs with neither correlation computable.
    pub skipped: usize,
}

impl PccRow {
    fn aggregate(per: &[PairPcc]) -> Self {
        let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let src: Vec<f64> = per.iter().filter_map(|p| p.vs_source).collect();
        let tgt: Vec<f64> = per.iter().filter_map(|p| p.vs_target).collect();
        PccRow {
            n_source: src.len(),
            n_target: tgt.len(),
            skipped: per
                .iter()
                .filter(|p| p.vs_source.is_none() && p.vs_target.is_none())
                .count(),
            vs_source: mean(src),
            vs_target: mean(tgt),
        }
    }
}

/// Spearman correlations between rank scores and the true factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeCorrelations {
    pub s_p_vs_pitch_factor: f64,
    pub s_r_vs_rhythm_factor: f64,
    pub s_p_vs_rhythm_factor: f64,
    pub s_r_vs_pitch_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub correlations: ProbeCorrelations,
    /// Entry-wise accuracy of per-token presence predicted from `h_c`.
    pub content_probe_accuracy: f64,
    /// Held-out speaker accuracy of a linear probe on each mean latent.
    pub timbre_leakage: BTreeMap<String, f64>,
    pub speaker_chance: f64,
    pub utterances: usize,
}

/// Probes the encoder on a held-out corpus with ground truth. Linear probes
/// train on a random half and are scored on the other half.
pub fn disentanglement_probes(model: &ModelBundle, corpus: &Corpus, seed: u64) -> Result<ProbeReport> {
    model.check_corpus(corpus)?;
    if corpus.len() < MIN_PROBE_UTTERANCES {
        return Err(Error::invalid(format!(
            "probes need at least {MIN_PROBE_UTTERANCES} utterances, got {}",
            corpus.len()
        )));
    }
    let truth = corpus
        .utterances
        .iter()
        .map(|u| {
            u.truth
                .clone()
                .ok_or_else(|| Error::invalid(format!("{} has no ground-truth factors", u.utt_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let z = encode_corpus(model, corpus)?;
    let s_p: Vec<f64> = z.iter().map(|b| b.s_p as f64).collect();
    let s_r: Vec<f64> = z.iter().map(|b| b.s_r as f64).collect();
    let pf: Vec<f64> = truth.iter().map(|t| t.pitch_factor).collect();
    let rf: Vec<f64> = truth.iter().map(|t| t.rhythm_factor).collect();
    let correlations = ProbeCorrelations {
        s_p_vs_pitch_factor: spearman(&s_p, &pf)?,
        s_r_vs_rhythm_factor: spearman(&s_r, &rf)?,
        s_p_vs_rhythm_factor: spearman(&s_p, &rf)?,
        s_r_vs_pitch_factor: spearman(&s_r, &pf)?,
    };

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, test) = order.split_at(corpus.len() / 2);

    let presence = Array2::from_shape_fn((corpus.len(), corpus.vocab), |(i, k)| {
        truth[i].content_tokens.contains(&k)
    });
    let h: Vec<Vec<f64>> = z.iter().map(|b| b.h_c.iter().map(|&v| v as f64).collect()).collect();
    let pick = |v: &[Vec<f64>], idx: &[usize]| rows(&idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>());
    let pick_rows = |m: &Array2<bool>, idx: &[usize]| m.select(ndarray::Axis(0), idx);
    let content = PresenceProbe::fit(&pick(&h, train).view(), &pick_rows(&presence, train))?;
    let content_probe_accuracy = content.accuracy(&pick(&h, test).view(), &pick_rows(&presence, test))?;

    let speakers: Vec<usize> = corpus.utterances.iter().map(|u| u.speaker_id).collect();
    let sel = |idx: &[usize]| idx.iter().map(|&i| speakers[i]).collect::<Vec<_>>();
    let mut timbre_leakage = BTreeMap::new();
    for (name, get) in [
        ("z_c", (|b: &LatentBundle| b.z_c.clone()) as fn(&LatentBundle) -> Array2<f32>),
        ("z_r", |b| b.z_r.clone()),
        ("z_p", |b| b.z_p.clone()),
    ] {
        let pooled: Vec<Vec<f64>> = z
            .iter()
            .map(|b| {
                get(b)
                    .mean_axis(ndarray::Axis(0))
                    .expect("non-empty")
                    .iter()
                    .map(|&v| v as f64)
                    .collect()
            })
            .collect();
        let p = SoftmaxProbe::fit(&pick(&pooled, train).view(), &sel(train), corpus.n_speakers)?;
        timbre_leakage.insert(name.to_string(), p.accuracy(&pick(&pooled, test).view(), &sel(test))?);
    }
    Ok(ProbeReport {
        correlations,
        content_probe_accuracy,
        timbre_leakage,
        speaker_chance: 1.0 / corpus.n_speakers as f64,
        utterances: corpus.len(),
    })
}

/// Published numbers kept next to the measured ones for layout only; they
/// come from full-scale training with a neural vocoder and listening tests
/// and are not reproduced here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperReference {
    pub note: String,
    /// Combination -> (baseline, proposed) log-F0 correlation.
    pub pcc: BTreeMap<String, (f64, f64)>,
    pub pcc_reference: BTreeMap<String, String>,
    /// Combination -> (baseline, proposed) character error rate in percent.
    pub cer_percent: BTreeMap<String, (f64, f64)>,
}

impl PaperReference {
    pub fn published() -> Self {
        let s = |x: &str| x.to_string();
        PaperReference {
            note: s("paper reference values, not reproduced by this evaluation"),
            pcc: [
                (s("Pitch-only"), (0.45, 0.41)),
                (s("Pitch+Timbre"), (0.42, 0.40)),
                (s("Pitch+Rhythm"), (0.41, 0.49)),
                (s("Pitch+Rhythm+Timbre"), (0.53, 0.69)),
            ]
            .into(),
            pcc_reference: [
                (s("Pitch-only"), s("vs_source, lower is better")),
                (s("Pitch+Timbre"), s("vs_source, lower is better")),
                (s("Pitch+Rhythm"), s("vs_target, higher is better")),
                (s("Pitch+Rhythm+Timbre"), s("vs_target, higher is better")),
            ]
            .into(),
            cer_percent: [
                (s("Pitch-only"), (64.5, 62.3)),
                (s("Rhythm-only"), (31.8, 22.7)),
                (s("Timbre-only"), (50.1, 46.0)),
                (s("Pitch+Rhythm"), (34.8, 36.2)),
                (s("Pitch+Timbre"), (61.8, 60.0)),
                (s("Rhythm+Timbre"), (27.6, 20.5)),
                (s("Pitch+Rhythm+Timbre"), (30.5, 23.6)),
            ]
            .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub seed: u64,
    pub pcc_table: BTreeMap<String, PccRow>,
    pub conversion_rate: BTreeMap<String, Option<ConversionRate>>,
    pub probe_correlations: Option<ProbeCorrelations>,
    pub content_probe_accuracy: Option<f64>,
    pub timbre_leakage: Option<BTreeMap<String, f64>>,
    pub speaker_chance: f64,
    pub paper_reference: PaperReference,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Full report on `corpus`. Probes run only when every utterance carries
/// ground truth and there are enough of them; a combination with no
/// decidable pair gets no rate.
pub fn evaluate(model: &ModelBundle, corpus: &Corpus, n_pairs: usize, seed: u64) -> Result<EvalReport> {
    let ev = Evaluator::new(model, corpus)?;
    let pairs = sample_pairs(corpus, n_pairs, seed)?;
    let pcc_table = ev.pcc_protocol(&pairs)?;
    let mut conversion_rate = BTreeMap::new();
    for combo in ConversionCombination::all() {
        let r = match ev.objective_conversion_rate(&pairs, combo) {
            Ok(r) => Some(r),
            Err(e) if e.is_validation() => None,
            Err(e) => return Err(e),
        };
        conversion_rate.insert(combo.label(), r);
    }
    let has_truth = corpus.utterances.iter().all(|u| u.truth.is_some());
    let probes = if has_truth && corpus.len() >= MIN_PROBE_UTTERANCES {
        Some(disentanglement_probes(model, corpus, seed)?)
    } else {
        None
    };
    Ok(EvalReport {
        pairs: n_pairs,
        seed,
        pcc_table,
        conversion_rate,
        probe_correlations: probes.as_ref().map(|p| p.correlations),
        content_probe_accuracy: probes.as_ref().map(|p| p.content_probe_accuracy),
        timbre_leakage: probes.as_ref().map(|p| p.timbre_leakage.clone()),
        speaker_chance: 1.0 / corpus.n_speakers as f64,
        paper_reference: PaperReference::published(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{render_toy_utterance, SpeakerProfile, ToyCorpusConfig, ToyUtteranceSpec};
    use crate::nets::{DecoderConfig, EncoderConfig};

    fn spec(speaker_id: usize, pitch: f64) -> ToyUtteranceSpec {
        ToyUtteranceSpec {
            speaker_id,
            content_tokens: vec![3, 1, 4, 1, 5],
            rhythm_factor: 1.2,
            pitch_factor: pitch,
            seed: 21,
        }
    }

    #[test]
    fn pcc_of_a_signal_with_itself_is_one_and_symmetric() {
        let a = render_toy_utterance(&spec(3, 1.0), &SpeakerProfile::for_speaker(3, 8));
        assert!((pcc_logf0(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = render_toy_utterance(&spec(3, 1.1), &SpeakerProfile::for_speaker(3, 8));
        assert_eq!(pcc_logf0(&a, &b).unwrap(), pcc_logf0(&b, &a).unwrap());
    }

    #[test]
    fn same_contour_different_timbre_correlates() {
        // Same seed and factors give the same contour shape; speakers 3 and 4
        // differ in spectral envelope. Align nominal F0 through pitch_factor.
        let p3 = SpeakerProfile::for_speaker(3, 8);
        let p4 = SpeakerProfile::for_speaker(4, 8);
        let a = render_toy_utterance(&spec(3, 1.0), &p3);
        let s4 = ToyUtteranceSpec {
            pitch_factor: spec(3, 1.0).nominal_f0(&p3) / spec(4, 1.0).nominal_f0(&p4),
            ..spec(4, 1.0)
        };
        let b = render_toy_utterance(&s4, &p4);
        let r = pcc_logf0(&a, &b).unwrap();
        assert!(r > 0.9, "{r}");
    }

    #[test]
    fn pcc_rejects_length_mismatch_and_unvoiced_input() {
        let a = render_toy_utterance(&spec(3, 1.0), &SpeakerProfile::for_speaker(3, 8));
        let short = Waveform::new(a.samples()[..8000].to_vec()).unwrap();
        assert!(pcc_logf0(&a, &short).is_err());
        let silent = Waveform::new(vec![0.0; a.len()]).unwrap();
        assert!(pcc_logf0(&a, &silent).is_err());
    }

    fn setup() -> (Corpus, ModelBundle) {
        let c = Corpus::toy(&ToyCorpusConfig {
            speakers: 4,
            per_speaker: 6,
            vocab: 12,
            seed: 4,
        })
        .unwrap();
        let mut m = ModelBundle::for_corpus(&c, EncoderConfig::tiny(), 1).unwrap();
        m.ensure_decoder(DecoderConfig::tiny(4), 2).unwrap();
        (c, m)
    }

    #[test]
    fn oracle_conversion_scores_perfectly() {
        let (c, m) = setup();
        let ev = Evaluator::new(&m, &c).unwrap();
        let all = ConversionCombination::all()[6];
        let pairs = ev.decidable_pairs(all, 8, 3).unwrap();
        let r = ev
            .rate_with(&pairs, all, |p| Ok(c.features(p.target).mel.clone()))
            .unwrap();
        assert_eq!(r.rate, 1.0);
        assert_eq!(r.decided_pairs, 8);
    }

    #[test]
    fn self_pairs_are_undecidable() {
        let (c, m) = setup();
        let ev = Evaluator::new(&m, &c).unwrap();
        let same = [EvalPair { source: 2, target: 2 }];
        for combo in ConversionCombination::all() {
            assert!(ev.objective_conversion_rate(&same, combo).is_err());
        }
    }

    #[test]
    fn protocol_has_a_row_per_combination_and_control() {
        let (c, m) = setup();
        let ev = Evaluator::new(&m, &c).unwrap();
        let pairs = sample_pairs(&c, 3, 1).unwrap();
        let t = ev.pcc_protocol(&pairs).unwrap();
        assert_eq!(t.len(), 8);
        assert!(t.contains_key(RECONSTRUCT) && t.contains_key("Pitch+Rhythm+Timbre"));
        for row in t.values() {
            assert!(row.vs_source.is_none_or(|v| (-1.0..=1.0).contains(&v)));
            assert!(row.n_source + row.skipped <= 3);
        }
        // Outputs sized like the source cannot be compared with a longer
        // target, so rhythm-preserving rows are mostly vs_source.
        assert!(pairs.iter().all(|p| p.source != p.target));
    }

    #[test]
    fn one_token_vocabulary_makes_content_probe_trivial() {
        let c = Corpus::toy(&ToyCorpusConfig {
            speakers: 2,
            per_speaker: 100,
            vocab: 1,
            seed: 8,
        })
        .unwrap();
        let m = ModelBundle::for_corpus(&c, EncoderConfig::tiny(), 1).unwrap();
        let r = disentanglement_probes(&m, &c, 0).unwrap();
        assert_eq!(r.content_probe_accuracy, 1.0);
        assert_eq!(r.speaker_chance, 0.5);
        for v in [
            r.correlations.s_p_vs_pitch_factor,
            r.correlations.s_r_vs_rhythm_factor,
        ] {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn probes_need_enough_utterances() {
        let (c, m) = setup();
        assert!(disentanglement_probes(&m, &c, 0).is_err());
    }

    #[test]
    fn report_is_deterministic() {
        let (c, m) = setup();
        let a = evaluate(&m, &c, 4, 9).unwrap();
        let b = evaluate(&m, &c, 4, 9).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.probe_correlations.is_none());
        assert_eq!(a.paper_reference.pcc["Pitch+Rhythm+Timbre"], (0.53, 0.69));
    }
}
