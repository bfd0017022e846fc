//! Grayscale images with intensities in `[0, 1]` and binary PGM (P5) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    /// Row-major intensities.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} image with {} pixels",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn clamp_unit(&mut self) {
        for p in &mut self.data {
            *p = p.clamp(0.0, 1.0);
        }
    }

    /// Quantizes to 8 bits (round to nearest).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Self, String> {
        // header: magic, width, height, maxval separated by whitespace, with
        // optional '#' comments; exactly one whitespace byte before raster
        let mut pos = 0;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated header".into());
            }
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?);
        }
        if tokens[0] != "P5" {
            return Err(format!("unsupported magic {:?}", tokens[0]));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| format!("bad header field {s:?}"))
        };
        let (width, height, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
        if maxval != 255 {
            return Err(format!("only 8-bit PGM supported, maxval {maxval}"));
        }
        pos += 1;
        let raster = bytes.get(pos..).unwrap_or_default();
        if raster.len() != width * height {
            return Err(format!(
                "expected {} raster bytes, found {}",
                width * height,
                raster.len()
            ));
        }
        Self::from_bytes(height, width, raster).map_err(|e| e.to_string())
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_pgm(&bytes).map_err(|msg| Error::Image {
            path: path.to_path_buf(),
            msg,
        })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_pgm()).map_err(|e| Error::io(path, e))
    }
}
