use std::f64::consts::PI;

const ZERO_CROSSINGS: f64 = 16.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling by `ratio = output_rate / input_rate` using a
/// Hann-windowed sinc kernel. The output has `round(len * ratio)` samples.
pub fn resample(samples: &[f32], ratio: f64) -> Vec<f32> {
    assert!(ratio > 0.0 && ratio.is_finite(), "resample ratio must be positive");
    let out_len = (samples.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half = ZERO_CROSSINGS / cutoff;
    let n = samples.len() as isize;
    (0..out_len)
        .map(|i| {
            let center = i as f64 / ratio;
            let lo = (center - half).ceil().max(0.0) as isize;
            let hi = ((center + half).floor() as isize).min(n - 1);
            let mut acc = 0.0f64;
            for k in lo..=hi {
                let d = center - k as f64;
                let w = 0.5 + 0.5 * (PI * d / half).cos();
                acc += samples[k as usize] as f64 * cutoff * sinc(cutoff * d) * w;
            }
            acc as f32
        })
        .collect()
}
