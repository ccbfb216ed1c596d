//! Binary PGM (P5) reader and writer.

use std::path::Path;

use crate::error::{Error, Result};

/// Integer grayscale raster as stored in a PGM file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, maxval: u16, pixels: Vec<u16>) -> Result<Self> {
        if maxval == 0 {
            return Err(Error::Invalid("PGM maxval must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::Invalid(format!(
                "{} pixels for a {width}×{height} image",
                pixels.len()
            )));
        }
        if let Some(&p) = pixels.iter().find(|&&p| p > maxval) {
            return Err(Error::Invalid(format!("pixel {p} exceeds maxval {maxval}")));
        }
        Ok(Self {
            width,
            height,
            maxval,
            pixels,
        })
    }

    /// Intensities divided by `maxval`.
    pub fn normalized(&self) -> Vec<f32> {
        let m = self.maxval as f32;
        self.pixels.iter().map(|&p| p as f32 / m).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.pixels.iter().map(|&p| p as u8));
        } else {
            out.extend(self.pixels.iter().flat_map(|p| p.to_be_bytes()));
        }
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_string(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    /// Skips whitespace and `#` comments.
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_blank();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                path: self.path.to_string(),
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

/// Parses P5 bytes; `path` only labels diagnostics.
pub fn parse_pgm(bytes: &[u8], path: &str) -> Result<GrayImage> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(c.err("missing PNM magic"));
    }
    if bytes[1] != b'5' {
        return Err(Error::UnsupportedVariant {
            path: path.to_string(),
            magic: String::from_utf8_lossy(&bytes[..2]).into_owned(),
        });
    }
    c.pos = 2;
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(c.err(format!("maxval {maxval} outside 1..=65535")));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(c.err("expected single whitespace before raster"));
    }
    c.pos += 1;
    let depth = if maxval < 256 { 1 } else { 2 };
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(depth))
        .ok_or_else(|| c.err("image dimensions overflow"))?;
    let raster = &bytes[c.pos..];
    if raster.len() < need {
        c.pos = bytes.len();
        return Err(c.err(format!(
            "truncated raster: {} of {need} bytes",
            raster.len()
        )));
    }
    let pixels: Vec<u16> = if depth == 1 {
        raster[..need].iter().map(|&b| b as u16).collect()
    } else {
        raster[..need]
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]))
            .collect()
    };
    if let Some(i) = pixels.iter().position(|&p| p as usize > maxval) {
        c.pos += i * depth;
        return Err(c.err(format!("sample {} exceeds maxval {maxval}", pixels[i])));
    }
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_pgm(&bytes, &path.display().to_string())
}

pub fn save_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, image.to_bytes())?;
    Ok(())
}
