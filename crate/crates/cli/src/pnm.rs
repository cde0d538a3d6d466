//! Binary netpbm I/O: P5 (grayscale) and P6 (color), maxval 255 only.
//!
//! Loading maps bytes to v/255; saving rounds to the nearest byte. A saved
//! image reloads bit-exactly because quantization happens exactly once.

use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};
use crate::image::Image;

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Parser<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(CliError::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Whitespace and `#` comments separate header tokens.
    fn skip_separators(&mut self) {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(b) = self.peek() {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => return,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return self.fail(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse()
            .map_err(|_| CliError::Parse {
                path: self.path.to_path_buf(),
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

pub fn load_pnm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut p = Parser {
        bytes: &bytes,
        pos: 0,
        path,
    };

    let channels = match bytes.get(0..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(magic) => {
            return p.fail(format!(
                "bad magic {:?}, expected P5 or P6",
                String::from_utf8_lossy(magic)
            ))
        }
        None => return p.fail("file shorter than a magic number"),
    };
    p.pos = 2;

    let width = p.number("width")?;
    let height = p.number("height")?;
    let maxval = p.number("maxval")?;
    if maxval != 255 {
        return p.fail(format!("maxval {maxval}, only 255 is supported"));
    }
    // exactly one whitespace byte before the payload
    match p.peek() {
        Some(b) if b.is_ascii_whitespace() => p.pos += 1,
        _ => return p.fail("expected single whitespace before payload"),
    }

    let expected = channels * width * height;
    let payload = &bytes[p.pos..];
    if payload.len() < expected {
        p.pos = bytes.len();
        return p.fail(format!(
            "truncated payload: {} of {expected} bytes",
            payload.len()
        ));
    }

    // interleaved bytes -> planar f64
    let mut data = vec![0.0; expected];
    let plane = width * height;
    for (i, px) in payload[..expected].chunks(channels).enumerate() {
        for (c, &b) in px.iter().enumerate() {
            data[c * plane + i] = b as f64 / 255.0;
        }
    }
    Image::new(channels, height, width, data)
}

pub fn save_pnm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    let plane = img.width * img.height;
    for i in 0..plane {
        for c in 0..img.channels {
            out.push((img.values()[c * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        for channels in [1usize, 3] {
            let n = channels * 5 * 4;
            let img = Image::new(
                channels,
                5,
                4,
                (0..n).map(|i| (i * 13 % 256) as f64 / 255.0).collect(),
            )
            .unwrap();
            let path = dir.path().join(format!("t{channels}.pnm"));
            save_pnm(&img, &path).unwrap();
            let loaded = load_pnm(&path).unwrap();
            assert_eq!(img, loaded);
            // save again: identical bytes
            let path2 = dir.path().join(format!("t{channels}b.pnm"));
            save_pnm(&loaded, &path2).unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        }
    }

    #[test]
    fn single_red_pixel() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("red.ppm");
        std::fs::write(&path, b"P6\n1 1\n255\n\xff\x00\x00").unwrap();
        let img = load_pnm(&path).unwrap();
        assert_eq!(img.values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_p4_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.pbm");
        std::fs::write(&path, b"P4\n1 1\n\x00").unwrap();
        let err = load_pnm(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn rejects_truncation_and_wrong_maxval() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.pgm");
        std::fs::write(&path, b"P5\n4 4\n255\nab").unwrap();
        let err = load_pnm(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let path = dir.path().join("max.pgm");
        std::fs::write(&path, b"P5\n1 1\n65535\n\x00\x00").unwrap();
        let err = load_pnm(&path).unwrap_err();
        assert!(err.to_string().contains("maxval"), "{err}");
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5 # comment\n# another\n2 1\n255\n\x00\xff").unwrap();
        let img = load_pnm(&path).unwrap();
        assert_eq!(img.values(), &[0.0, 1.0]);
    }

    #[test]
    fn parse_error_reports_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("off.pgm");
        std::fs::write(&path, b"P5\n2 1\n255\n\x00").unwrap();
        match load_pnm(&path).unwrap_err() {
            CliError::Parse { offset, .. } => assert_eq!(offset, 12),
            other => panic!("unexpected error {other}"),
        }
    }
}
