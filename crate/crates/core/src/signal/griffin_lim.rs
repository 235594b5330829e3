use std::sync::OnceLock;

use nalgebra::DMatrix;
use ndarray::Array2;
use rustfft::num_complex::Complex32;

use super::mel::mel_filterbank;
use super::stft::Stft;
use super::{MelSpectrogram, Waveform};
use crate::error::{Error, Result};

pub const GRIFFIN_LIM_ITERATIONS: usize = 60;

/// `[n_bins x N_MELS]` pseudo-inverse of the mel filterbank.
fn mel_pinv() -> &'static Array2<f32> {
    static PINV: OnceLock<Array2<f32>> = OnceLock::new();
    PINV.get_or_init(|| {
        let fb = mel_filterbank();
        let (r, c) = fb.dim();
        let m = DMatrix::from_fn(r, c, |i, j| fb[[i, j]] as f64);
        let p = m
            .pseudo_inverse(1e-10)
            .expect("mel filterbank pseudo-inverse");
        Array2::from_shape_fn((c, r), |(i, j)| p[(i, j)] as f32)
    })
}

/// Inverts a log-mel spectrogram to audio: pseudo-inverse to linear power,
/// then Griffin-Lim phase recovery from a zero-phase start.
pub fn griffin_lim(m: &MelSpectrogram, iterations: usize) -> Result<Waveform> {
    if iterations < 1 {
        return Err(Error::invalid("griffin_lim needs at least one iteration"));
    }
    let energy = m.frames().mapv(|v| v.exp());
    let linear = energy.dot(&mel_pinv().t());
    let mag = linear.mapv(|p| p.max(0.0).sqrt());

    let stft = Stft::new();
    let mut spec = mag.mapv(|a| Complex32::new(a, 0.0));
    let mut samples = stft.inverse(&spec);
    for _ in 1..iterations {
        let rebuilt = stft.forward(&samples);
        for ((s, r), &a) in spec.iter_mut().zip(rebuilt.iter()).zip(mag.iter()) {
            let n = r.norm();
            *s = if n > 1e-12 {
                r * (a / n)
            } else {
                Complex32::new(a, 0.0)
            };
        }
        samples = stft.inverse(&spec);
    }
    Ok(Waveform::from_raw(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{estimate_f0, mel_spectrogram, LOG_FLOOR, N_MELS};

    #[test]
    fn rejects_zero_iterations() {
        let m = MelSpectrogram::new(Array2::zeros((4, N_MELS))).unwrap();
        assert!(griffin_lim(&m, 0).is_err());
    }

    #[test]
    fn silence_resynthesizes_to_near_zero() {
        let m = MelSpectrogram::new(Array2::from_elem((10, N_MELS), LOG_FLOOR.ln() as f32))
            .unwrap();
        let w = griffin_lim(&m, 5).unwrap();
        assert_eq!(w.len(), 10 * 400);
        assert!(w.rms() < 1e-3);
    }

    #[test]
    fn tone_roundtrip_keeps_f0() {
        let x: Vec<f32> = (0..16000)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 16000.0).sin()) as f32)
            .collect();
        let w = Waveform::new(x).unwrap();
        let m = mel_spectrogram(&w).unwrap();
        let y = griffin_lim(&m, GRIFFIN_LIM_ITERATIONS).unwrap();
        let f = estimate_f0(&y).median_voiced_hz().unwrap();
        assert!((f - 220.0).abs() / 220.0 < 0.05, "{f}");
    }
}
