//! Portable pixmap (P6/P3) and graymap (P5/P2) I/O, 8-bit only.

use std::path::Path;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar `[3, H, W]` floats in `[0, 1]`.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                out[c * plane + p] = self.pixels[p * 3 + c] as f64 / 255.0;
            }
        }
        out
    }

    pub fn from_planar(width: usize, height: usize, planar: &[f64]) -> Self {
        let plane = width * height;
        let mut img = RgbImage::new(width, height);
        for p in 0..plane {
            for c in 0..3 {
                img.pixels[p * 3 + c] = quantize(planar[c * plane + p]);
            }
        }
        img
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        decode(&std::fs::read(path)?)
    }
}

/// Rounds a `[0, 1]` intensity to a byte, clamping out-of-range values.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CoreError::Format(format!("expected a number at byte {start}")))
    }
}

/// Decodes P2/P3/P5/P6; graymaps are expanded to RGB.
pub fn decode(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(CoreError::Format("not a PNM file".into()));
    }
    let kind = bytes[1];
    let mut h = Header { bytes, pos: 2 };
    let width = h.number()?;
    let height = h.number()?;
    let maxval = h.number()?;
    if maxval == 0 || maxval > 255 {
        return Err(CoreError::Format(format!("unsupported maxval {maxval}")));
    }
    let channels = match kind {
        b'2' | b'5' => 1,
        b'3' | b'6' => 3,
        _ => return Err(CoreError::Format(format!("unsupported PNM kind P{}", kind as char))),
    };
    let count = width * height * channels;
    let samples: Vec<u8> = match kind {
        b'5' | b'6' => {
            // exactly one whitespace byte separates the header from the raster
            let start = h.pos + 1;
            let raster = bytes
                .get(start..start + count)
                .ok_or_else(|| CoreError::Format("truncated raster".into()))?;
            raster.to_vec()
        }
        _ => (0..count)
            .map(|_| h.number().map(|v| v.min(maxval) as u8))
            .collect::<Result<_>>()?,
    };
    let scale = |v: u8| -> u8 {
        if maxval == 255 {
            v
        } else {
            ((v as usize * 255 + maxval / 2) / maxval) as u8
        }
    };
    let mut img = RgbImage::new(width, height);
    for p in 0..width * height {
        for c in 0..3 {
            let s = if channels == 1 { samples[p] } else { samples[p * 3 + c] };
            img.pixels[p * 3 + c] = scale(s);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let mut img = RgbImage::new(3, 2);
        img.put(2, 1, [10, 200, 30]);
        let back = decode(&img.encode()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ascii_graymap_with_comment() {
        let src = b"P2\n# comment\n2 1\n15\n0 15\n";
        let img = decode(src).unwrap();
        assert_eq!(img.get(0, 0), [0, 0, 0]);
        assert_eq!(img.get(1, 0), [255, 255, 255]);
    }

    #[test]
    fn planar_conversion_round_trips_bytes() {
        let mut img = RgbImage::new(2, 2);
        for (i, v) in img.pixels.iter_mut().enumerate() {
            *v = (i * 21) as u8;
        }
        let planar = img.to_planar();
        assert_eq!(RgbImage::from_planar(2, 2, &planar), img);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"hello").is_err());
        assert!(decode(b"P6\n4 4\n255\n\x00").is_err());
    }
}
