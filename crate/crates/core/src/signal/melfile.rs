//! Flat binary mel arrays: `b"MEL0"`, u32 frames, u32 bins, u32 reserved,
//! then row-major little-endian f32 values.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::MelSpectrogram;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MEL0";

pub fn encode(m: &MelSpectrogram) -> Vec<u8> {
    let (t, n) = m.frames().dim();
    let mut out = Vec::with_capacity(16 + 4 * t * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in m.frames().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<MelSpectrogram> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::invalid("not a MEL0 file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (t, n) = (word(4), word(8));
    let body = &bytes[16..];
    if body.len() != 4 * t * n {
        return Err(Error::shape(format!(
            "MEL0 header says {t}x{n} but payload has {} bytes",
            body.len()
        )));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let frames = Array2::from_shape_vec((t, n), values).map_err(|e| Error::shape(e.to_string()))?;
    MelSpectrogram::new(frames)
}

pub fn write(path: impl AsRef<Path>, m: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(m)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::N_MELS;

    #[test]
    fn header_layout() {
        let m = MelSpectrogram::new(Array2::from_shape_fn((3, N_MELS), |(i, j)| (i * 100 + j) as f32))
            .unwrap();
        let b = encode(&m);
        assert_eq!(&b[..4], b"MEL0");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 80);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 0);
        assert_eq!(b.len(), 16 + 3 * 80 * 4);
        // second value of the first row
        assert_eq!(f32::from_le_bytes(b[20..24].try_into().unwrap()), 1.0);
        assert_eq!(decode(&b).unwrap(), m);
    }

    #[test]
    fn rejects_truncated() {
        let m = MelSpectrogram::new(Array2::zeros((2, N_MELS))).unwrap();
        let b = encode(&m);
        assert!(decode(&b[..b.len() - 4]).is_err());
        assert!(decode(b"MEL1xxxxxxxxxxxx").is_err());
    }
}
