//! Binary PGM (P5) reading and writing.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::GrayImage;
use crate::io::write_atomic;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a binary PGM (missing P5 magic)")]
    BadMagic,
    #[error("malformed PGM header: {0}")]
    BadHeader(&'static str),
    #[error("unsupported maxval {0}; only 8-bit PGM is supported")]
    UnsupportedMaxval(u32),
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// Parses a P5 image, mapping samples to `[0, 1]` by dividing by maxval.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(PgmError::BadHeader("unexpected end of header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(PgmError::BadHeader("expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(PgmError::BadHeader("number out of range"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PgmError::BadHeader("missing separator after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(PgmError::BadHeader("zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    let (width, height) = (width as usize, height as usize);
    let expected = width * height;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            found: raster.len(),
        });
    }
    let scale = maxval as f32;
    let data = raster[..expected]
        .iter()
        .map(|&b| (b as f32 / scale).min(1.0))
        .collect();
    Ok(GrayImage::new(width, height, data).expect("dimensions and range checked above"))
}

/// Encodes as P5 with maxval 255, rounding to the nearest level.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, PgmError> {
    parse_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), PgmError> {
    let bytes = encode_pgm(img);
    write_atomic(path, |w| w.write_all(&bytes))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        bytes.extend([0u8, 51, 255, 102, 204, 153]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.get(1, 0), 0.2);
        assert_eq!(img.get(2, 0), 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(parse_pgm(b"P2\n1 1\n255\n0"), Err(PgmError::BadMagic)));
        assert!(matches!(
            parse_pgm(b"P5\n2 2\n65535\n\0\0"),
            Err(PgmError::UnsupportedMaxval(65535))
        ));
        assert!(matches!(
            parse_pgm(b"P5\n2 2\n255\n\0\0"),
            Err(PgmError::Truncated { expected: 4, found: 2 })
        ));
        assert!(matches!(parse_pgm(b"P5\n2"), Err(PgmError::BadHeader(_))));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let raster: Vec<u8> = (0..w * h)
                .map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 56) as u8)
                .collect();
            let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
            bytes.extend(&raster);
            let img = parse_pgm(&bytes).unwrap();
            prop_assert_eq!(encode_pgm(&img), bytes);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = GrayImage::from_fn(5, 4, |x, y| (x * 4 + y) as f32 / 255.0);
        write_pgm(&path, &img).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
    }
}
