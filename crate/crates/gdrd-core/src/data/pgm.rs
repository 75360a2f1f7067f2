//! Binary (P5) PGM image IO. Only 8-bit images (maxval 255) are supported;
//! pixel values map to `[0, 1]` by dividing by 255.

use std::path::Path;

use super::{io_err, DataError};
use crate::tensor::Tensor;
use crate::Element;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl PgmImage {
    /// Converts to a `(1, height, width)` tensor with values in `[0, 1]`.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .pixels
            .iter()
            .map(|&p| T::from_f64(f64::from(p) / 255.0))
            .collect();
        Tensor::from_vec(&[1, self.height, self.width], data)
            .expect("pixel count matches dimensions by construction")
    }
}

struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> HeaderScanner<'a> {
    fn bad(&self, message: impl Into<String>) -> DataError {
        DataError::BadHeader {
            path: self.path.display().to_string(),
            message: message.into(),
        }
    }

    /// Skips whitespace and `#` comments, then returns the next token.
    fn token(&mut self) -> Result<&'a [u8], DataError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(self.bad("header ended early")),
            }
        }
        let start = self.pos;
        while let Some(b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize, DataError> {
        let tok = self.token()?;
        let text = std::str::from_utf8(tok).map_err(|_| self.bad(format!("{what} is not ASCII")))?;
        if text.len() > 9 {
            return Err(self.bad(format!("{what} out of range: {text}")));
        }
        text.parse::<usize>()
            .map_err(|_| self.bad(format!("{what} is not a number: {text:?}")))
    }
}

/// Parses a binary PGM file. Malformed input yields a structured error.
pub fn read_pgm(path: &Path) -> Result<PgmImage, DataError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let mut scan = HeaderScanner {
        bytes: &bytes,
        pos: 0,
        path,
    };

    if scan.token()? != b"P5" {
        return Err(DataError::BadMagic {
            path: path.display().to_string(),
            expected: "P5",
        });
    }
    let width = scan.number("width")?;
    let height = scan.number("height")?;
    let maxval = scan.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(scan.bad(format!("zero-sized image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(scan.bad(format!("maxval must be 255, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(scan.pos) {
        Some(b) if b.is_ascii_whitespace() => scan.pos += 1,
        _ => return Err(scan.bad("missing whitespace before pixel data")),
    }

    let expected = width
        .checked_mul(height)
        .ok_or_else(|| scan.bad(format!("image dimensions overflow: {width}x{height}")))?;
    let payload = &bytes[scan.pos..];
    if payload.len() < expected {
        return Err(DataError::Truncated {
            path: path.display().to_string(),
            section: "pixel data",
        });
    }
    if payload.len() > expected {
        return Err(DataError::TrailingBytes {
            path: path.display().to_string(),
            extra: payload.len() - expected,
        });
    }

    Ok(PgmImage {
        width,
        height,
        pixels: payload.to_vec(),
    })
}

/// Writes a binary PGM file with maxval 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), DataError> {
    if pixels.len() != width * height {
        return Err(DataError::DimMismatch {
            what: format!("pgm pixel buffer for {width}x{height}"),
            expected: width * height,
            got: pixels.len(),
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Loads an image as a `(1, height, width)` tensor with values in `[0, 1]`.
pub fn load_image<T: Element>(path: &Path) -> Result<Tensor<T>, DataError> {
    Ok(read_pgm(path)?.to_tensor())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let pixels: Vec<u8> = (0..24).map(|i| (i * 11) as u8).collect();
        write_pgm(&path, 6, 4, &pixels).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.width, 6);
        assert_eq!(img.height, 4);
        assert_eq!(img.pixels, pixels);
    }

    #[test]
    fn pixels_scale_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        write_pgm(&path, 2, 2, &[0, 128, 255, 64]).unwrap();
        let t = load_image::<f64>(&path).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        let d = t.data();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 128.0 / 255.0).abs() < 1e-12);
        assert_eq!(d[2], 1.0);
        assert!((d[3] - 64.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        std::fs::write(&path, b"P2\n2 2\n255\n....").unwrap();
        assert!(matches!(read_pgm(&path), Err(DataError::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        std::fs::write(&path, b"P5\n4 4\n255\nabc").unwrap();
        assert!(matches!(
            read_pgm(&path),
            Err(DataError::Truncated { section: "pixel data", .. })
        ));
    }

    #[test]
    fn oversized_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        std::fs::write(&path, b"P5\n2 2\n255\nabcde").unwrap();
        assert!(matches!(
            read_pgm(&path),
            Err(DataError::TrailingBytes { extra: 1, .. })
        ));
    }

    #[test]
    fn non_255_maxval_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        std::fs::write(&path, b"P5\n2 2\n65535\nabcdefgh").unwrap();
        assert!(matches!(read_pgm(&path), Err(DataError::BadHeader { .. })));
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        std::fs::write(&path, b"P5\n# made by hand\n2 1\n255\nab").unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.pixels, b"ab");
    }
}
