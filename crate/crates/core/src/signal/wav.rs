//! RIFF WAV input/output (mono, 16-bit PCM or 32-bit float).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{resample, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Reads a mono WAV file. Files at other sample rates are rejected unless
/// `allow_resample` is set, in which case they are resampled to 16 kHz.
pub fn read_wav(path: impl AsRef<Path>, allow_resample: bool) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Audio(format!(
            "{}: expected mono, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Audio(format!(
                "{}: unsupported sample format {fmt:?}/{bits} bit",
                path.display()
            )))
        }
    };
    let samples = if spec.sample_rate == SAMPLE_RATE {
        samples
    } else if allow_resample {
        resample(&samples, SAMPLE_RATE as f64 / spec.sample_rate as f64)
    } else {
        return Err(Error::Audio(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE} (use --allow-resample)",
            path.display(),
            spec.sample_rate
        )));
    };
    Waveform::new(samples)
}

/// Writes 32-bit float WAV; lossless for the crate's sample type.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    for &s in w.samples() {
        writer.write_sample(s)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Writes 16-bit PCM WAV with clipping to [-1, 1].
pub fn write_wav_pcm16(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    for &s in w.samples() {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| (i as f32 * 0.05).sin() * 0.5).collect()).unwrap()
    }

    #[test]
    fn float_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = tone(4000);
        write_wav(&p, &w).unwrap();
        assert_eq!(read_wav(&p, false).unwrap(), w);
    }

    #[test]
    fn pcm16_roundtrip_is_close() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = tone(4000);
        write_wav_pcm16(&p, &w).unwrap();
        let r = read_wav(&p, false).unwrap();
        for (a, b) in w.samples().iter().zip(r.samples()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn other_rates_need_opt_in() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 22_050,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut wr = WavWriter::create(&p, spec).unwrap();
        for i in 0..22_050 {
            wr.write_sample(((i as f32 * 0.05).sin() * 10000.0) as i16).unwrap();
        }
        wr.finalize().unwrap();
        assert!(matches!(read_wav(&p, false), Err(Error::Audio(_))));
        let w = read_wav(&p, true).unwrap();
        assert_eq!(w.len(), 16_000);
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut wr = WavWriter::create(&p, spec).unwrap();
        for _ in 0..4000 {
            wr.write_sample(0i16).unwrap();
        }
        wr.finalize().unwrap();
        assert!(matches!(read_wav(&p, false), Err(Error::Audio(_))));
    }
}
