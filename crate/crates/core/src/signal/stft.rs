use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use super::{HOP, N_FFT, WINDOW};

/// Number of frames for `n` samples under centered framing.
pub fn num_frames(n: usize) -> usize {
    n.div_ceil(HOP)
}

pub(crate) fn hann(len: usize) -> Vec<f32> {
    (0..len)
        .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos()) as f32)
        .collect()
}

/// Copies the analysis window for frame `t` (zero outside the signal).
pub(crate) fn frame_into(samples: &[f32], t: usize, out: &mut [f32]) {
    let start = (t * HOP) as isize - (WINDOW / 2) as isize;
    for (j, o) in out.iter_mut().enumerate() {
        let idx = start + j as isize;
        *o = if idx >= 0 && (idx as usize) < samples.len() {
            samples[idx as usize]
        } else {
            0.0
        };
    }
}

/// Short-time Fourier transform with the crate's fixed framing.
pub struct Stft {
    window: Vec<f32>,
    fft: Arc<dyn Fft<f32>>,
    ifft: Arc<dyn Fft<f32>>,
}

impl Default for Stft {
    fn default() -> Self {
        Self::new()
    }
}

impl Stft {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        Stft {
            window: hann(WINDOW),
            fft: planner.plan_fft_forward(N_FFT),
            ifft: planner.plan_fft_inverse(N_FFT),
        }
    }

    pub fn n_bins(&self) -> usize {
        N_FFT / 2 + 1
    }

    /// Complex spectra, `[frames x n_bins]`.
    pub fn forward(&self, samples: &[f32]) -> Array2<Complex32> {
        let t_count = num_frames(samples.len());
        let nb = self.n_bins();
        let mut out = Array2::from_elem((t_count, nb), Complex32::new(0.0, 0.0));
        let mut frame = vec![0f32; WINDOW];
        let mut buf = vec![Complex32::new(0.0, 0.0); N_FFT];
        for t in 0..t_count {
            frame_into(samples, t, &mut frame);
            for (b, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex32::new(x * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = buf[k];
            }
        }
        out
    }

    /// Power spectra `|X|^2`, `[frames x n_bins]`.
    pub fn power(&self, samples: &[f32]) -> Array2<f32> {
        self.forward(samples).mapv(|c| c.norm_sqr())
    }

    /// Weighted overlap-add inverse; returns `frames * HOP` samples.
    pub fn inverse(&self, spec: &Array2<Complex32>) -> Vec<f32> {
        let t_count = spec.nrows();
        let nb = self.n_bins();
        let out_len = t_count * HOP;
        let pad = WINDOW / 2;
        let full = out_len + WINDOW;
        let mut acc = vec![0f32; full];
        let mut norm = vec![0f32; full];
        let mut buf = vec![Complex32::new(0.0, 0.0); N_FFT];
        let scale = 1.0 / N_FFT as f32;
        for t in 0..t_count {
            let row = spec.row(t);
            for k in 0..nb {
                buf[k] = row[k];
            }
            for k in nb..N_FFT {
                buf[k] = row[N_FFT - k].conj();
            }
            self.ifft.process(&mut buf);
            let start = t * HOP;
            for j in 0..WINDOW {
                let w = self.window[j];
                acc[start + j] += buf[j].re * scale * w;
                norm[start + j] += w * w;
            }
        }
        (0..out_len)
            .map(|i| {
                let n = norm[i + pad];
                if n > 1e-6 {
                    acc[i + pad] / n
                } else {
                    0.0
                }
            })
            .collect()
    }
}
