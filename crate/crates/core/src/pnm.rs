//! Binary portable pixmap (P6) and graymap (P5) files with maxval 255.

use std::fs;
use std::path::Path;

use ficm_numerics::Tensor;

use crate::error::{io_err, Error, Result};

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[3,H,W]` tensor as P6 or a `[1,H,W]` tensor as P5; values are
/// clamped to `[0, 1]`.
pub fn write_image(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(Error::Image {
            path: path.into(),
            detail: format!("expected [1|3,H,W], got {s:?}"),
        });
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let magic = if c == 3 { "P6" } else { "P5" };
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            bytes.push(to_byte(img.data()[ch * plane + p]));
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Writes raw bytes as a P5 graymap.
pub fn write_pgm_bytes(path: &Path, w: usize, h: usize, pixels: &[u8]) -> Result<()> {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(io_err(path))
}

fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    Some((tokens, i + 1))
}

/// Reads a P5 or P6 file into a `[1,H,W]` or `[3,H,W]` tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let bad = |detail: &str| Error::Image {
        path: path.into(),
        detail: detail.into(),
    };
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (tok, start) = header_tokens(&bytes, 4).ok_or_else(|| bad("truncated header"))?;
    let c = match tok[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad("not a binary PGM/PPM file")),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(&tok[1])?, parse(&tok[2])?, parse(&tok[3])?);
    if maxval == 0 || maxval > 255 || w == 0 || h == 0 {
        return Err(bad("unsupported dimensions or maxval"));
    }
    let raster = bytes.get(start..start + c * w * h).ok_or_else(|| bad("truncated raster"))?;
    let plane = w * h;
    let mut data = vec![0.0f32; c * plane];
    for p in 0..plane {
        for ch in 0..c {
            data[ch * plane + p] = raster[p * c + ch] as f32 / maxval as f32;
        }
    }
    Ok(Tensor::new(&[c, h, w], data)?)
}
