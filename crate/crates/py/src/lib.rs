//! Python bindings for the rdvc voice-conversion library.
//!
//! Waveforms cross the boundary as lists of floats at 16 kHz and mel
//! spectrograms as `[T][80]` nested lists.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use rdvc::augment::{self, AugmentationConfig};
use rdvc::convert::{self, ConversionCombination, ConversionRequest, SpeakerUtterance};
use rdvc::data::{render_toy_utterance, SpeakerProfile, ToyUtteranceSpec};
use rdvc::losses;
use rdvc::signal::{self, MelSpectrogram};
use rdvc::train::ModelBundle;

fn py_err(e: rdvc::Error) -> PyErr {
    match e {
        rdvc::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Mono 16 kHz audio.
#[pyclass(name = "Waveform", frozen)]
struct PyWaveform(signal::Waveform);

#[pymethods]
impl PyWaveform {
    #[new]
    fn new(samples: Vec<f32>) -> PyResult<Self> {
        signal::Waveform::new(samples).map(PyWaveform).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, resample=false))]
    fn read(path: &str, resample: bool) -> PyResult<Self> {
        signal::wav::read_wav(path, resample).map(PyWaveform).map_err(py_err)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        signal::wav::write_wav(path, &self.0).map_err(py_err)
    }

    fn samples(&self) -> Vec<f32> {
        self.0.samples().to_vec()
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.0.sample_rate()
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.0.num_frames()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Waveform({} samples, {:.3} s)", self.0.len(), self.0.duration_secs())
    }
}

/// Log-mel spectrogram, one row per frame.
#[pyclass(name = "MelSpectrogram", frozen)]
struct PyMel(MelSpectrogram);

#[pymethods]
impl PyMel {
    #[getter]
    fn num_frames(&self) -> usize {
        self.0.num_frames()
    }

    fn frames(&self) -> Vec<Vec<f32>> {
        self.0.frames().rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn __repr__(&self) -> String {
        format!("MelSpectrogram({} frames)", self.0.num_frames())
    }
}

#[pyfunction]
fn mel_spectrogram(w: &PyWaveform) -> PyResult<PyMel> {
    signal::mel_spectrogram(&w.0).map(PyMel).map_err(py_err)
}

/// Per-frame F0 in Hz, `None` for unvoiced frames.
#[pyfunction]
fn estimate_f0(w: &PyWaveform) -> Vec<Option<f64>> {
    let t = signal::estimate_f0(&w.0);
    t.f0_hz.iter().zip(&t.voiced).map(|(&f, &v)| v.then_some(f)).collect()
}

#[pyfunction]
#[pyo3(signature = (mel, iterations=None))]
fn griffin_lim(mel: &PyMel, iterations: Option<usize>) -> PyResult<PyWaveform> {
    signal::griffin_lim(&mel.0, iterations.unwrap_or(signal::GRIFFIN_LIM_ITERATIONS))
        .map(PyWaveform)
        .map_err(py_err)
}

#[pyfunction]
fn pitch_aug(w: &PyWaveform, tau: f64) -> PyResult<PyWaveform> {
    augment::pitch_aug(&w.0, tau, &AugmentationConfig::default())
        .map(PyWaveform)
        .map_err(py_err)
}

#[pyfunction]
fn rhythm_aug(w: &PyWaveform, tau: f64) -> PyResult<PyWaveform> {
    augment::rhythm_aug(&w.0, tau, &AugmentationConfig::default())
        .map(PyWaveform)
        .map_err(py_err)
}

/// Renders one synthetic utterance for a speaker of a `n_speakers` roster.
#[pyfunction]
#[pyo3(signature = (speaker_id, n_speakers, tokens, rhythm_factor=1.0, pitch_factor=1.0, seed=0))]
fn toy_utterance(
    speaker_id: usize,
    n_speakers: usize,
    tokens: Vec<usize>,
    rhythm_factor: f64,
    pitch_factor: f64,
    seed: u64,
) -> PyResult<PyWaveform> {
    if speaker_id >= n_speakers {
        return Err(PyValueError::new_err("speaker_id must be below n_speakers"));
    }
    let spec = ToyUtteranceSpec {
        speaker_id,
        content_tokens: tokens,
        rhythm_factor,
        pitch_factor,
        seed,
    };
    spec.validate(usize::MAX).map_err(py_err)?;
    Ok(PyWaveform(render_toy_utterance(
        &spec,
        &SpeakerProfile::for_speaker(speaker_id, n_speakers),
    )))
}

#[pyfunction]
fn rank_pair_loss(s: f64, s_aug: f64, tau: f64) -> PyResult<f64> {
    losses::rank_pair_loss(&losses::RankPair { s, s_aug, tau }).map_err(py_err)
}

/// log-F0 correlation over frames voiced in both signals.
#[pyfunction]
fn pcc_logf0(converted: &PyWaveform, reference: &PyWaveform) -> PyResult<f64> {
    rdvc::eval::pcc_logf0(&converted.0, &reference.0).map_err(py_err)
}

/// A trained model checkpoint.
#[pyclass(name = "Model", frozen)]
struct PyModel(ModelBundle);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ModelBundle::load(path).map(PyModel).map_err(py_err)
    }

    #[getter]
    fn n_speakers(&self) -> usize {
        self.0.n_speakers
    }

    #[getter]
    fn has_decoder(&self) -> bool {
        self.0.decoder.is_some()
    }

    fn reconstruct(&self, w: &PyWaveform, speaker_id: usize) -> PyResult<PyMel> {
        let u = SpeakerUtterance {
            waveform: w.0.clone(),
            speaker_id,
        };
        convert::reconstruct(&self.0, &u).map(PyMel).map_err(py_err)
    }

    /// `combo` names the converted components, e.g. `"pitch,rhythm"`.
    fn convert(
        &self,
        source: &PyWaveform,
        source_speaker: usize,
        target: &PyWaveform,
        target_speaker: usize,
        combo: &str,
    ) -> PyResult<PyMel> {
        let combination: ConversionCombination = combo.parse().map_err(py_err)?;
        let req = ConversionRequest {
            source: SpeakerUtterance {
                waveform: source.0.clone(),
                speaker_id: source_speaker,
            },
            target: SpeakerUtterance {
                waveform: target.0.clone(),
                speaker_id: target_speaker,
            },
            combination,
        };
        convert::convert(&self.0, &req).map(PyMel).map_err(py_err)
    }
}

#[pymodule]
fn rdvc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWaveform>()?;
    m.add_class::<PyMel>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(mel_spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_f0, m)?)?;
    m.add_function(wrap_pyfunction!(griffin_lim, m)?)?;
    m.add_function(wrap_pyfunction!(pitch_aug, m)?)?;
    m.add_function(wrap_pyfunction!(rhythm_aug, m)?)?;
    m.add_function(wrap_pyfunction!(toy_utterance, m)?)?;
    m.add_function(wrap_pyfunction!(rank_pair_loss, m)?)?;
    m.add_function(wrap_pyfunction!(pcc_logf0, m)?)?;
    m.add("SAMPLE_RATE", signal::SAMPLE_RATE)?;
    Ok(())
}
