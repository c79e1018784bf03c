//! Image ingestion (binary PGM/PPM and raw tensor dumps) and PGM output.
//!
//! Raw tensor dump layout, all little-endian:
//!
//! ```text
//! b"VTEN"  u32 ndim (= 3)  u32 channels (1 or 3)  u32 height  u32 width
//! f32 × channels·height·width, row-major, values already in [-1, 1]
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Height every model input is resized to.
pub const INPUT_HEIGHT: usize = 32;
pub const RAW_MAGIC: &[u8; 4] = b"VTEN";

fn img_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Image(format!("{}: {msg}", path.display()))
}

/// A decoded image as planar channels in model range `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Planar {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn token(&mut self) -> Option<&str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.bytes.get(self.pos) == Some(&b'#') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok().filter(|t| !t.is_empty())
    }

    fn number(&mut self) -> Option<usize> {
        self.token()?.parse().ok().filter(|&n| n > 0)
    }
}

/// Decodes a binary PGM (`P5`) or PPM (`P6`) file.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Planar> {
    let mut c = Cursor { bytes, pos: 0 };
    let channels = match c.token() {
        Some("P5") => 1,
        Some("P6") => 3,
        _ => return Err(img_err(path, "not a binary PGM/PPM file")),
    };
    let (Some(width), Some(height), Some(maxval)) = (c.number(), c.number(), c.number()) else {
        return Err(img_err(path, "corrupt header"));
    };
    if maxval > 65535 {
        return Err(img_err(path, format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the samples.
    let start = c.pos + 1;
    let depth = if maxval < 256 { 1 } else { 2 };
    let n = width * height * channels;
    let need = start + n * depth;
    if bytes.len() < need {
        return Err(img_err(path, format!("truncated: {} bytes, need {need}", bytes.len())));
    }
    let scale = 2.0 / maxval as f32;
    let sample = |i: usize| -> f32 {
        let v = if depth == 1 {
            bytes[start + i] as u32
        } else {
            u16::from_be_bytes([bytes[start + 2 * i], bytes[start + 2 * i + 1]]) as u32
        };
        (v.min(maxval as u32) as f32 * scale - 1.0).clamp(-1.0, 1.0)
    };
    let mut data = vec![0.0; n];
    for y in 0..height {
        for x in 0..width {
            for ch in 0..channels {
                data[(ch * height + y) * width + x] = sample((y * width + x) * channels + ch);
            }
        }
    }
    Ok(Planar { channels, height, width, data })
}

/// Decodes a raw tensor dump.
pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<Planar> {
    let word = |i: usize| -> Option<u32> {
        let b = bytes.get(4 + 4 * i..8 + 4 * i)?;
        Some(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    if bytes.len() < 4 || &bytes[..4] != RAW_MAGIC {
        return Err(img_err(path, "missing raw tensor magic"));
    }
    let (Some(3), Some(c), Some(h), Some(w)) = (word(0), word(1), word(2), word(3)) else {
        return Err(img_err(path, "corrupt raw tensor header"));
    };
    let (c, h, w) = (c as usize, h as usize, w as usize);
    if !(c == 1 || c == 3) || h == 0 || w == 0 {
        return Err(img_err(path, format!("unsupported raw tensor shape {c}x{h}x{w}")));
    }
    let body = &bytes[20..];
    if body.len() != 4 * c * h * w {
        return Err(img_err(path, format!("raw tensor body has {} bytes, expected {}", body.len(), 4 * c * h * w)));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(img_err(path, "raw tensor holds non-finite values"));
    }
    Ok(Planar { channels: c, height: h, width: w, data })
}

/// Encodes a `[C, H, W]` tensor (C of 1 or 3) as a raw tensor dump.
pub fn encode_raw(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = t.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(Error::Image(format!("raw dumps hold [1|3, H, W] tensors, got {s:?}")));
    }
    let mut out = RAW_MAGIC.to_vec();
    for d in [3, s[0], s[1], s[2]] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Resizes to height 32 keeping the aspect ratio, pads the width up to a
/// multiple of 4 by repeating the last column, and replicates grayscale to
/// three channels. Returns `[3, 32, W]`.
pub fn to_model_input(img: &Planar) -> Tensor<f32> {
    let oh = INPUT_HEIGHT;
    let ow = ((img.width as f64 * oh as f64 / img.height as f64).round() as usize).max(1);
    let resized = if (img.height, img.width) == (oh, ow) {
        img.data.clone()
    } else {
        kernels::resize_bilinear(&img.data, img.channels, img.height, img.width, oh, ow)
    };
    let pw = ow.div_ceil(4) * 4;
    let mut data = Vec::with_capacity(3 * oh * pw);
    for ch in 0..3 {
        let src = ch.min(img.channels - 1);
        for y in 0..oh {
            let row = &resized[(src * oh + y) * ow..(src * oh + y + 1) * ow];
            data.extend_from_slice(row);
            data.extend(std::iter::repeat_n(row[ow - 1], pw - ow));
        }
    }
    Tensor::new(&[3, oh, pw], data).expect("consistent input shape")
}

/// Reads a PGM, PPM, or raw tensor file into a `[3, 32, W]` model input.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = if bytes.starts_with(RAW_MAGIC) {
        decode_raw(&bytes, path)?
    } else {
        decode_pnm(&bytes, path)?
    };
    Ok(to_model_input(&img))
}

/// Serializes 8-bit grayscale pixels as a binary PGM.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count mismatch");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Serializes planar RGB values in `[-1, 1]` as a binary PPM.
pub fn encode_ppm(t: &Tensor<f32>) -> Vec<u8> {
    let s = t.shape();
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = t.data()[(ch.min(s[0] - 1) * h + y) * w + x];
                out.push(((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8);
            }
        }
    }
    out
}
