//! YIN-style F0 estimation on the shared analysis framing.

use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;

use super::stft::num_frames;
use super::{median, Waveform, HOP, SAMPLE_RATE, WINDOW};

pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 600.0;
/// Cumulative-mean-normalized difference must dip below this to count as voiced.
pub const APERIODICITY_THRESHOLD: f32 = 0.3;
/// Frames quieter than this RMS are unvoiced without analysis.
const SILENCE_RMS: f32 = 1e-3;
const CORR_FFT: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    /// Hz on voiced frames, 0 elsewhere.
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl F0Track {
    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn voiced_hz(&self) -> Vec<f64> {
        self.f0_hz
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &v)| v)
            .map(|(&f, _)| f)
            .collect()
    }

    pub fn voiced_log_f0(&self) -> Vec<f64> {
        self.voiced_hz().into_iter().map(f64::ln).collect()
    }

    pub fn median_voiced_hz(&self) -> Option<f64> {
        let v = self.voiced_hz();
        (!v.is_empty()).then(|| median(&v))
    }

    pub fn voiced_fraction(&self) -> f64 {
        self.voiced.iter().filter(|&&v| v).count() as f64 / self.voiced.len().max(1) as f64
    }
}

pub fn estimate_f0(w: &Waveform) -> F0Track {
    let lag_min = (SAMPLE_RATE as f64 / F0_MAX_HZ).floor() as usize;
    let lag_max = (SAMPLE_RATE as f64 / F0_MIN_HZ).ceil() as usize;
    let width = WINDOW - lag_max - 1;

    let mut planner = FftPlanner::<f32>::new();
    let fwd = planner.plan_fft_forward(CORR_FFT);
    let inv = planner.plan_fft_inverse(CORR_FFT);

    let t_count = num_frames(w.len());
    let mut f0_hz = vec![0.0; t_count];
    let mut voiced = vec![false; t_count];

    let mut frame = vec![0f32; WINDOW];
    let mut head = vec![Complex32::new(0.0, 0.0); CORR_FFT];
    let mut full = vec![Complex32::new(0.0, 0.0); CORR_FFT];
    let mut prefix = vec![0f64; WINDOW + 1];
    let mut cmnd = vec![1f32; lag_max + 2];

    for t in 0..t_count {
        // Edge frames analyze the nearest window that lies fully inside the signal.
        let start = (t * HOP).saturating_sub(WINDOW / 2).min(w.len() - WINDOW);
        frame.copy_from_slice(&w.samples()[start..start + WINDOW]);
        for (i, p) in frame.iter().enumerate() {
            prefix[i + 1] = prefix[i] + (*p as f64) * (*p as f64);
        }
        let e0 = prefix[width];
        if ((e0 / width as f64).sqrt() as f32) < SILENCE_RMS {
            continue;
        }

        for (i, c) in head.iter_mut().enumerate() {
            *c = Complex32::new(if i < width { frame[i] } else { 0.0 }, 0.0);
        }
        for (i, c) in full.iter_mut().enumerate() {
            *c = Complex32::new(if i < WINDOW { frame[i] } else { 0.0 }, 0.0);
        }
        fwd.process(&mut head);
        fwd.process(&mut full);
        for (h, f) in head.iter_mut().zip(&full) {
            *h = h.conj() * f;
        }
        inv.process(&mut head);
        let scale = 1.0 / CORR_FFT as f64;

        // Cumulative mean normalized difference function.
        let mut running = 0f64;
        cmnd[0] = 1.0;
        for lag in 1..=lag_max + 1 {
            let r = head[lag].re as f64 * scale;
            let e_lag = prefix[lag + width] - prefix[lag];
            let d = (e0 + e_lag - 2.0 * r).max(0.0);
            running += d;
            cmnd[lag] = if running > 0.0 {
                (d * lag as f64 / running) as f32
            } else {
                1.0
            };
        }

        let mut pick = None;
        let mut lag = lag_min;
        while lag <= lag_max {
            if cmnd[lag] < APERIODICITY_THRESHOLD {
                // Formant ripple can put a shallow dip just before the true
                // period; take the deepest point up to 20 % further out.
                let stop = (lag + lag / 5).min(lag_max);
                let best = (lag..=stop)
                    .min_by(|&a, &b| cmnd[a].total_cmp(&cmnd[b]))
                    .unwrap_or(lag);
                pick = Some(best);
                break;
            }
            lag += 1;
        }
        let Some(lag) = pick else { continue };

        let refined = if lag > 1 && lag <= lag_max {
            let (a, b, c) = (cmnd[lag - 1] as f64, cmnd[lag] as f64, cmnd[lag + 1] as f64);
            let denom = a - 2.0 * b + c;
            if denom.abs() > 1e-12 {
                lag as f64 + (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
            } else {
                lag as f64
            }
        } else {
            lag as f64
        };
        let f = SAMPLE_RATE as f64 / refined;
        if (F0_MIN_HZ..=F0_MAX_HZ).contains(&f) {
            f0_hz[t] = f;
            voiced[t] = true;
        }
    }
    F0Track { f0_hz, voiced }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sawtooth(freq: f64, n: usize) -> Waveform {
        let mut phase = 0.0f64;
        let samples = (0..n)
            .map(|_| {
                let v = 2.0 * phase - 1.0;
                phase = (phase + freq / SAMPLE_RATE as f64).fract();
                (0.4 * v) as f32
            })
            .collect();
        Waveform::new(samples).unwrap()
    }

    #[test]
    fn sawtooth_220_is_tracked() {
        let track = estimate_f0(&sawtooth(220.0, 16_000));
        assert_eq!(track.len(), 40);
        assert!(track.voiced.iter().all(|&v| v));
        let good = track
            .f0_hz
            .iter()
            .filter(|f| ((*f - 220.0) / 220.0).abs() <= 0.02)
            .count();
        assert!(good as f64 >= 0.95 * track.len() as f64, "{:?}", track.f0_hz);
    }

    #[test]
    fn silence_is_unvoiced() {
        let track = estimate_f0(&Waveform::new(vec![0.0; 8000]).unwrap());
        assert!(track.voiced.iter().all(|&v| !v));
        assert!(track.f0_hz.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn octave_consistency() {
        let lo = estimate_f0(&sawtooth(110.0, 16_000)).median_voiced_hz().unwrap();
        let hi = estimate_f0(&sawtooth(220.0, 16_000)).median_voiced_hz().unwrap();
        assert!(((hi / lo) - 2.0).abs() / 2.0 < 0.02, "{lo} {hi}");
    }
}
