//! PNG storage for LDR frames (8/16-bit RGB, delinearized) and masks (1-bit).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{delinearize, linearize, LdrFrame, PixelFrame, SatMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngDepth {
    Eight,
    Sixteen,
}

/// Writes an LDR frame as RGB PNG. The frame is delinearized with `gamma`
/// before quantization so the stored file is display-referred.
pub fn write_ldr_png(
    frame: &LdrFrame,
    path: impl AsRef<Path>,
    depth: PngDepth,
    gamma: f32,
) -> Result<()> {
    if frame.channels() != 3 {
        return Err(Error::invalid("PNG writer expects 3-channel frames"));
    }
    let display = delinearize(frame, gamma)?;
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, frame.width() as u32, frame.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    let mut bytes: Vec<u8>;
    match depth {
        PngDepth::Eight => {
            encoder.set_depth(png::BitDepth::Eight);
            bytes = Vec::with_capacity(display.data().len());
            for v in display.data() {
                bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        PngDepth::Sixteen => {
            encoder.set_depth(png::BitDepth::Sixteen);
            bytes = Vec::with_capacity(display.data().len() * 2);
            for v in display.data() {
                let q = (v * 65535.0).round().clamp(0.0, 65535.0) as u16;
                bytes.extend_from_slice(&q.to_be_bytes());
            }
        }
    }
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("png header: {e}")))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Format(format!("png data: {e}")))?;
    Ok(())
}

/// Reads an RGB PNG written by [`write_ldr_png`] and re-linearizes it.
pub fn read_ldr_png(path: impl AsRef<Path>, gamma: f32) -> Result<LdrFrame> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png info: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png frame: {e}")))?;
    if info.color_type != png::ColorType::Rgb {
        return Err(Error::Format("expected RGB PNG".into()));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data: Vec<f32> = match info.bit_depth {
        png::BitDepth::Eight => buf[..w * h * 3].iter().map(|b| *b as f32 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..w * h * 6]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect(),
        other => return Err(Error::Format(format!("unsupported PNG bit depth {other:?}"))),
    };
    let display = LdrFrame::new(w, h, 3, data)?;
    linearize(&display, gamma)
}

/// Writes a saturation mask as a 1-bit grayscale PNG (white = masked).
pub fn write_mask_png(mask: &SatMask, path: impl AsRef<Path>) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, mask.width() as u32, mask.height() as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::One);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("png header: {e}")))?;
    // Rows packed MSB-first, padded to whole bytes.
    let row_bytes = mask.width().div_ceil(8);
    let mut bytes = vec![0u8; row_bytes * mask.height()];
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                bytes[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Format(format!("png data: {e}")))?;
    Ok(())
}

/// Reads a 1-bit mask PNG written by [`write_mask_png`].
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<SatMask> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png info: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png frame: {e}")))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::One {
        return Err(Error::Format("expected 1-bit grayscale mask PNG".into()));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let row_bytes = w.div_ceil(8);
    let mut data = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = buf[y * row_bytes + x / 8] & (0x80 >> (x % 8)) != 0;
        }
    }
    SatMask::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ldr_png_round_trip_within_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f32> = (0..6 * 5 * 3).map(|_| rng.random_range(0.0..=1.0)).collect();
        let frame = LdrFrame::new(6, 5, 3, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.png");
        write_ldr_png(&frame, &path, PngDepth::Sixteen, 2.0).unwrap();
        let back = read_ldr_png(&path, 2.0).unwrap();
        assert!(frame.same_dims(&back));
        for (a, b) in frame.data().iter().zip(back.data()) {
            // 16-bit quantization in the delinearized domain.
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn mask_png_round_trip_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<bool> = (0..13 * 7).map(|_| rng.random_bool(0.3)).collect();
        let mask = SatMask::new(13, 7, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        write_mask_png(&mask, &path).unwrap();
        let back = read_mask_png(&path).unwrap();
        assert_eq!(mask, back);
    }
}
