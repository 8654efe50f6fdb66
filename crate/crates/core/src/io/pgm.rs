//! Binary PGM (`P5`) per the Netpbm format: 8-bit samples when
//! `maxval < 256`, otherwise 16-bit big-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::GrayImage;

/// A decoded PGM and the `maxval` it declared.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub image: GrayImage,
    pub maxval: u16,
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    load_pgm(path).map(|p| p.image)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Pgm> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Header<'_> {
    fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::MalformedHeader {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.malformed(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.malformed(format!("{what} out of range")))
    }
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Pgm> {
    let magic = &bytes[..bytes.len().min(2)];
    if magic != b"P5" {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            magic: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let mut h = Header {
        bytes,
        pos: 2,
        path,
    };
    if !h
        .bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(h.malformed("missing whitespace after magic number"));
    }
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(h.malformed(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(h.malformed(format!("maxval {maxval} outside 1..=65535")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !h.bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(h.malformed("missing whitespace after maxval"));
    }
    let start = h.pos + 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bps))
        .ok_or_else(|| h.malformed("dimensions overflow"))?;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let samples: Vec<u32> = if bps == 1 {
        payload[..expected].iter().map(|&b| b as u32).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect()
    };
    if let Some(i) = samples.iter().position(|&s| s > maxval) {
        return Err(Error::invalid(format!(
            "{}: sample {i} is {} but maxval is {maxval}",
            path.display(),
            samples[i]
        )));
    }
    let image = GrayImage::new(height, width, samples.into_iter().map(f64::from).collect())?;
    Ok(Pgm {
        image,
        maxval: maxval as u16,
    })
}

/// Encodes with values rounded to the nearest integer and clamped to
/// `[0, maxval]`. Returns the bytes and the number of saturated pixels.
pub fn encode_pgm(img: &GrayImage, maxval: u16) -> Result<(Vec<u8>, usize)> {
    if maxval == 0 {
        return Err(Error::invalid("maxval must be >= 1"));
    }
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    let mut saturated = 0;
    for &p in img.pixels() {
        let v = p.round();
        let q = if v > maxval as f64 {
            saturated += 1;
            maxval
        } else {
            v as u16
        };
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    Ok((out, saturated))
}

pub fn save_pgm(img: &GrayImage, maxval: u16, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let (bytes, saturated) = encode_pgm(img, maxval)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(saturated)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decode(bytes: &[u8]) -> Result<Pgm> {
        decode_pgm(bytes, Path::new("mem.pgm"))
    }

    #[test]
    fn decodes_8bit() {
        let mut b = b"P5\n2 2\n255\n".to_vec();
        b.extend([0, 128, 255, 64]);
        let p = decode(&b).unwrap();
        assert_eq!(p.maxval, 255);
        assert_eq!(p.image.pixels(), &[0.0, 128.0, 255.0, 64.0]);
        assert_eq!(p.image.get(1, 0), 255.0);
    }

    #[test]
    fn decodes_16bit_big_endian() {
        let mut b = b"P5 1 1 65535\n".to_vec();
        b.extend([0x01, 0x00]);
        assert_eq!(decode(&b).unwrap().image.pixels(), &[256.0]);
    }

    #[test]
    fn header_comments() {
        let mut b = b"P5\n# made by hand\n3 # width\n1\n# max\n7\n".to_vec();
        b.extend([1, 2, 7]);
        assert_eq!(decode(&b).unwrap().image.pixels(), &[1.0, 2.0, 7.0]);
    }

    #[test]
    fn rejects_ascii_pgm() {
        let err = decode(b"P2\n1 1\n255\n0\n").unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat { ref magic, .. } if magic == "P2"));
        assert!(err.to_string().contains("P5"));
        assert!(matches!(decode(b""), Err(Error::UnsupportedFormat { .. })));
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(
            decode(b"P5\n2 x\n255\n"),
            Err(Error::MalformedHeader { .. })
        ));
        assert!(matches!(
            decode(b"P5\n2 2\n0\n\0\0\0\0"),
            Err(Error::MalformedHeader { .. })
        ));
        assert!(matches!(
            decode(b"P5\n2 2\n255\n\x01\x02"),
            Err(Error::TruncatedPayload {
                expected: 4,
                found: 2,
                ..
            })
        ));
        assert!(matches!(
            decode(b"P5\n1 1\n9\n\x0a"),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            load_image("/nonexistent/dir/none.pgm"),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn encode_round_trip() {
        let img = GrayImage::new(2, 3, vec![0.0, 1.4, 2.6, 255.0, 300.0, 7.0]).unwrap();
        let (bytes, sat) = encode_pgm(&img, 255).unwrap();
        assert_eq!(sat, 1);
        let back = decode(&bytes).unwrap().image;
        assert_eq!(back.pixels(), &[0.0, 1.0, 3.0, 255.0, 255.0, 7.0]);

        let (bytes, sat) = encode_pgm(&img, 1023).unwrap();
        assert_eq!(sat, 0);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.maxval, 1023);
        assert_eq!(back.image.get(1, 1), 300.0);
    }
}
