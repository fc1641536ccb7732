//! Portable Float Map reader/writer for HDR frames.
//!
//! Color frames use the `PF` header; the sign of the scale line encodes
//! endianness (negative = little-endian, which is what we write). Rows are
//! stored bottom-to-top per the format convention.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::HdrFrame;
use crate::error::{Error, Result};

/// Writes `frame` as a little-endian color PFM.
pub fn write_pfm(frame: &HdrFrame, path: impl AsRef<Path>) -> Result<()> {
    use super::PixelFrame;
    if frame.channels() != 3 {
        return Err(Error::invalid("PFM writer expects 3-channel frames"));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "PF\n{} {}\n-1.0\n", frame.width(), frame.height())?;
    let (w, h) = (frame.width(), frame.height());
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..3 {
                out.write_all(&frame.get(x, y, c).to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn read_token(reader: &mut impl Read) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        reader.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(byte[0]);
    }
    String::from_utf8(token).map_err(|_| Error::Format("non-UTF8 PFM header".into()))
}

/// Reads a color PFM into an [`HdrFrame`]. Negative samples are clamped to
/// zero so the frame invariant holds.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<HdrFrame> {
    let mut reader = BufReader::new(File::open(path)?);
    let magic = read_token(&mut reader)?;
    if magic != "PF" {
        return Err(Error::Format(format!("unsupported PFM magic {magic:?}")));
    }
    let width: usize = read_token(&mut reader)?
        .parse()
        .map_err(|_| Error::Format("bad PFM width".into()))?;
    let height: usize = read_token(&mut reader)?
        .parse()
        .map_err(|_| Error::Format("bad PFM height".into()))?;
    let scale: f32 = read_token(&mut reader)?
        .parse()
        .map_err(|_| Error::Format("bad PFM scale".into()))?;
    if scale == 0.0 {
        return Err(Error::Format("PFM scale must be non-zero".into()));
    }
    let little_endian = scale < 0.0;
    let magnitude = scale.abs();

    let mut raw = vec![0u8; width * height * 3 * 4];
    reader.read_exact(&mut raw)?;
    let mut data = vec![0f32; width * height * 3];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        if !v.is_finite() {
            return Err(Error::Format("non-finite sample in PFM".into()));
        }
        // Bottom-to-top row order.
        let y = height - 1 - i / (width * 3);
        let rem = i % (width * 3);
        data[y * width * 3 + rem] = (v * magnitude).max(0.0);
    }
    HdrFrame::new(width, height, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<f32> = (0..5 * 4 * 3).map(|_| rng.random_range(0.0..10.0)).collect();
        let frame = HdrFrame::new(5, 4, 3, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.pfm");
        write_pfm(&frame, &path).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(frame, back);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"P6\n2 2\n255\n").unwrap();
        assert!(read_pfm(&path).is_err());
    }
}
