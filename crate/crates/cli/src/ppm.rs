//! Minimal reader and writer for 8-bit RGB PPM images (P3 and P6).

use std::path::Path;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(CliError::config(format!(
                "image of {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self { width, height, pixels: vec![rgb; width * height] }
    }
}

fn malformed(msg: impl std::fmt::Display) -> CliError {
    CliError::config(format!("malformed PPM: {msg}"))
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() && self.bytes[self.pos] != b'#' {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(malformed("unexpected end of data"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| malformed("non-ASCII header"))
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.token()?;
        t.parse().map_err(|_| malformed(format!("`{t}` is not a number")))
    }
}

/// Parses a P3 or P6 image. Sample values are rescaled from `maxval` to 255.
pub fn decode(bytes: &[u8]) -> Result<Image> {
    let mut h = Header { bytes, pos: 0 };
    let binary = match h.token()? {
        "P3" => false,
        "P6" => true,
        m => return Err(malformed(format!("unsupported magic `{m}`"))),
    };
    let width = h.number()?;
    let height = h.number()?;
    let maxval = h.number()?;
    if maxval == 0 || maxval > 255 {
        return Err(malformed(format!("maxval {maxval} is not an 8-bit depth")));
    }
    if width == 0 || height == 0 {
        return Err(malformed("empty image"));
    }
    let n = width * height;
    let scale = |v: usize| -> Result<u8> {
        if v > maxval {
            return Err(malformed(format!("sample {v} exceeds maxval {maxval}")));
        }
        Ok(((v * 255 + maxval / 2) / maxval) as u8)
    };
    let mut pixels = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = h.pos + 1;
        let raster = bytes.get(start..start + 3 * n).ok_or_else(|| malformed("truncated raster"))?;
        for c in raster.chunks_exact(3) {
            pixels.push([scale(c[0] as usize)?, scale(c[1] as usize)?, scale(c[2] as usize)?]);
        }
    } else {
        for _ in 0..n {
            pixels.push([scale(h.number()?)?, scale(h.number()?)?, scale(h.number()?)?]);
        }
    }
    Image::new(width, height, pixels)
}

/// Binary P6 encoding with maxval 255.
pub fn encode_p6(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().flatten());
    out
}

/// Plain-text P3 encoding, one pixel per line.
pub fn encode_p3(image: &Image) -> Vec<u8> {
    let mut out = format!("P3\n{} {}\n255\n", image.width, image.height);
    for [r, g, b] in &image.pixels {
        out.push_str(&format!("{r} {g} {b}\n"));
    }
    out.into_bytes()
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, image: &Image) -> Result<()> {
    std::fs::write(path, encode_p6(image)).map_err(|source| CliError::Output { path: path.to_path_buf(), source })
}
