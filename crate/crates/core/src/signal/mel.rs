use std::sync::OnceLock;

use ndarray::Array2;

use super::stft::Stft;
use super::{MelSpectrogram, Waveform, LOG_FLOOR, N_FFT, N_MELS, SAMPLE_RATE};
use crate::error::Result;

// Slaney mel scale: linear below 1 kHz, logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn logstep() -> f64 {
    6.4f64.ln() / 27.0
}

fn hz_to_mel(f: f64) -> f64 {
    if f < MIN_LOG_HZ {
        f / F_SP
    } else {
        MIN_LOG_MEL + (f / MIN_LOG_HZ).ln() / logstep()
    }
}

fn mel_to_hz(m: f64) -> f64 {
    if m < MIN_LOG_MEL {
        m * F_SP
    } else {
        MIN_LOG_HZ * (logstep() * (m - MIN_LOG_MEL)).exp()
    }
}

fn mel_edges() -> Vec<f64> {
    let lo = hz_to_mel(0.0);
    let hi = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
    (0..N_MELS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
        .collect()
}

/// Center frequency in Hz of every mel filter.
pub fn mel_center_frequencies() -> Vec<f64> {
    mel_edges()[1..=N_MELS].to_vec()
}

fn build_filterbank() -> Array2<f32> {
    let n_bins = N_FFT / 2 + 1;
    let edges = mel_edges();
    let mut fb = Array2::<f32>::zeros((N_MELS, n_bins));
    for m in 0..N_MELS {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        // Area normalization keeps per-filter energy comparable across bands.
        let enorm = 2.0 / (hi - lo);
        for k in 0..n_bins {
            let f = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
            let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0);
            fb[[m, k]] = (w * enorm) as f32;
        }
    }
    fb
}

/// `[N_MELS x n_bins]` triangular filterbank.
pub fn mel_filterbank() -> &'static Array2<f32> {
    static FB: OnceLock<Array2<f32>> = OnceLock::new();
    FB.get_or_init(build_filterbank)
}

/// Maps a power spectrogram to natural-log mel energies.
pub(crate) fn power_to_log_mel(power: &Array2<f32>) -> Array2<f32> {
    let fb = mel_filterbank();
    let mel = power.dot(&fb.t());
    mel.mapv(|e| ((e as f64).max(0.0) + LOG_FLOOR).ln() as f32)
}

pub fn mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    let power = Stft::new().power(w.samples());
    MelSpectrogram::new(power_to_log_mel(&power))
}

/// Argmax mel bin for every frame.
#[cfg(test)]
pub(crate) fn argmax_bins(m: &MelSpectrogram) -> Vec<usize> {
    m.frames()
        .axis_iter(ndarray::Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0
        })
        .collect()
}
