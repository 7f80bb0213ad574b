//! Binary netpbm I/O: P6 colour images in, P6/P5 out.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::tensor::Tensor;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.buf[start..self.pos]).ok()?.parse().ok()
    }
}

/// Decodes a binary P6 image with maxval 255 into `[3, H, W]` values in `0..=255`.
pub fn decode_ppm_bytes(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let err = |msg: &str| Error::Image {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(err("not a binary PPM (magic P6)"));
    }
    let mut cur = Cursor { buf: bytes, pos: 2 };
    let w = cur.number().filter(|&v| v > 0).ok_or_else(|| err("bad width"))?;
    let h = cur.number().filter(|&v| v > 0).ok_or_else(|| err("bad height"))?;
    let maxval = cur.number().ok_or_else(|| err("bad maxval"))?;
    if maxval != 255 {
        return Err(err(&format!("unsupported maxval {maxval} (need 255)")));
    }
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(err("missing whitespace after header"));
    }
    let raster = &bytes[cur.pos + 1..];
    let n = w * h;
    if raster.len() < 3 * n {
        return Err(err(&format!("truncated raster: {} of {} bytes", raster.len(), 3 * n)));
    }
    let mut data = vec![0.0; 3 * n];
    for (i, px) in raster[..3 * n].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = f64::from(px[c]);
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn decode_ppm(path: &Path) -> Result<Tensor> {
    decode_ppm_bytes(&fsutil::read(path)?, path)
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Encodes `[3, H, W]` as P6; values are rounded and clamped to `0..=255`.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let [3, h, w] = image.shape()[..] else {
        return Err(Error::shape("encode_ppm", format!("need [3,H,W], got {:?}", image.shape())));
    };
    let n = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * n);
    let d = image.data();
    for i in 0..n {
        for c in 0..3 {
            out.push(to_u8(d[c * n + i]));
        }
    }
    Ok(out)
}

/// Encodes a `[H, W]` map as P5, min-max scaled to `0..=255`. A constant map
/// encodes as all zeros.
pub fn encode_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let [h, w] = map.shape()[..] else {
        return Err(Error::shape("encode_pgm", format!("need [H,W], got {:?}", map.shape())));
    };
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| {
        if span > 0.0 {
            to_u8((v - lo) / span * 255.0)
        } else {
            0
        }
    }));
    Ok(out)
}
