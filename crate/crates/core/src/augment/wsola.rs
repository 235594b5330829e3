//! Waveform-similarity overlap-add time stretching.

use crate::signal::SAMPLE_RATE;

/// 25 ms analysis/synthesis window.
pub const FRAME: usize = (SAMPLE_RATE as usize * 25) / 1000;
/// 10 ms search tolerance around each nominal analysis position.
pub const TOLERANCE: usize = (SAMPLE_RATE as usize * 10) / 1000;
const SYN_HOP: usize = FRAME / 2;

#[inline]
fn at(x: &[f32], i: isize) -> f32 {
    if i >= 0 && (i as usize) < x.len() {
        x[i as usize]
    } else {
        0.0
    }
}

fn correlation(x: &[f32], a: isize, b: isize) -> f32 {
    let n = FRAME as isize;
    let inside = |s: isize| s >= 0 && s + n <= x.len() as isize;
    if inside(a) && inside(b) {
        let (a, b) = (a as usize, b as usize);
        x[a..a + FRAME]
            .iter()
            .zip(&x[b..b + FRAME])
            .map(|(p, q)| p * q)
            .sum()
    } else {
        (0..n).map(|j| at(x, a + j) * at(x, b + j)).sum()
    }
}

/// Changes tempo by `factor` (> 1 is faster) without changing pitch.
/// The output has exactly `round(len / factor)` samples.
pub fn time_stretch(x: &[f32], factor: f64) -> Vec<f32> {
    assert!(factor > 0.0 && factor.is_finite());
    let out_len = (x.len() as f64 / factor).round() as usize;
    let window: Vec<f32> = (0..FRAME)
        .map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / FRAME as f64).cos()) as f32)
        .collect();
    let half = (FRAME / 2) as isize;
    let tol = TOLERANCE as isize;
    let ana_hop = SYN_HOP as f64 * factor;

    let mut out = vec![0f32; out_len + FRAME];
    let mut prev: Option<isize> = None;
    let mut k = 0usize;
    loop {
        let center = (k * SYN_HOP) as isize;
        if center - half >= out_len as isize {
            break;
        }
        let nominal = (k as f64 * ana_hop).round() as isize - half;
        let start = match prev {
            None => nominal,
            Some(p) => {
                // Pick the candidate most similar to the natural continuation
                // of the previously copied segment.
                let natural = p + SYN_HOP as isize;
                let mut best = nominal;
                let mut best_score = f32::NEG_INFINITY;
                for delta in -tol..=tol {
                    let cand = nominal + delta;
                    let score = correlation(x, natural, cand);
                    if score > best_score {
                        best_score = score;
                        best = cand;
                    }
                }
                best
            }
        };
        let out_start = center - half;
        for j in 0..FRAME {
            let o = out_start + j as isize;
            if o >= 0 && (o as usize) < out.len() {
                out[o as usize] += window[j] * at(x, start + j as isize);
            }
        }
        prev = Some(start);
        k += 1;
    }
    out.truncate(out_len);
    out
}
