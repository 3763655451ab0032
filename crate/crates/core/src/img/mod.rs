//! Conditioning modalities: isometric renders, sketch synthesis (canny edge
//! + blur), axis-scale augmentation and encoder preprocessing.

mod edge;
mod preprocess;
mod render;
mod scale;

pub use edge::{canny, gaussian_blur, make_sketch};
pub use preprocess::{preprocess_for_encoder, ENCODER_SIZE};
pub use render::{render_isometric, RENDER_SIZE};
pub use scale::{scale_variants, ScaleOutcome, ScaledVariant, DEFAULT_FACTORS};

use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ImgError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("cannot render an empty solid")]
    EmptySolid,
    #[error("pgm parse error: {0}")]
    PgmParse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ImgError {
    fn from(e: std::io::Error) -> Self {
        ImgError::Io(e.to_string())
    }
}

/// Single-channel 8-bit raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage { width, height, data: vec![0; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImgError> {
        if data.len() != width * height {
            return Err(ImgError::Parameter(format!(
                "data length {} != {width}x{height}",
                data.len()
            )));
        }
        Ok(GrayImage { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Binary PGM (P5), optionally with a provenance comment line.
    pub fn write_pgm(&self, w: &mut impl Write, comment: Option<&str>) -> Result<(), ImgError> {
        writeln!(w, "P5")?;
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{} {}", self.width, self.height)?;
        writeln!(w, "255")?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn read_pgm(r: &mut impl BufRead) -> Result<Self, ImgError> {
        let mut tokens: Vec<String> = Vec::new();
        let mut header = String::new();
        // Header: magic, width, height, maxval; comments start with '#'.
        while tokens.len() < 4 {
            header.clear();
            if r.read_line(&mut header)? == 0 {
                return Err(ImgError::PgmParse("truncated header".to_string()));
            }
            let line = header.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_string));
        }
        if tokens[0] != "P5" {
            return Err(ImgError::PgmParse(format!("unsupported magic {}", tokens[0])));
        }
        let parse = |s: &String| {
            s.parse::<usize>().map_err(|_| ImgError::PgmParse(format!("bad number {s}")))
        };
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(ImgError::PgmParse(format!("unsupported maxval {maxval}")));
        }
        let mut data = vec![0u8; width * height];
        r.read_exact(&mut data).map_err(|e| ImgError::PgmParse(e.to_string()))?;
        Ok(GrayImage { width, height, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip_with_comment() {
        let mut img = GrayImage::new(7, 5);
        img.set(3, 2, 200);
        let mut buf = Vec::new();
        img.write_pgm(&mut buf, Some("synth seed=42")).unwrap();
        let back = GrayImage::read_pgm(&mut buf.as_slice()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn bad_dimensions_are_rejected() {
        assert!(GrayImage::from_data(3, 3, vec![0; 8]).is_err());
    }
}
