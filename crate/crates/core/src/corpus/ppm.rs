use std::fs;
use std::path::Path;

use crate::error::{I2pError, Result};

/// Binary PPM (P6, maxval 255) encoding of an HWC image in `[0, 1]`.
pub fn encode_ppm(pixels: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if pixels.len() != width * height * 3 {
        return Err(I2pError::Shape(format!(
            "{} values for a {width}x{height} RGB image",
            pixels.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Parses a P6 file with maxval 255 into `(width, height, pixels)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |detail: &str| I2pError::Format {
        kind: "ppm",
        detail: detail.to_string(),
    };
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
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
            return Err(bad("header ends early"));
        }
        fields.push(&bytes[start..pos]);
    }
    if fields[0] != b"P6" {
        return Err(bad("missing P6 magic"));
    }
    let num = |f: &[u8]| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("non-numeric header field"))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    if w == 0 || h == 0 {
        return Err(bad("zero image dimension"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(I2pError::Truncated {
            kind: "ppm",
            expected: w * h * 3,
            found: 0,
        });
    }
    let payload = &bytes[pos + 1..];
    let want = w * h * 3;
    if payload.len() < want {
        return Err(I2pError::Truncated {
            kind: "ppm",
            expected: want,
            found: payload.len(),
        });
    }
    if payload.len() > want {
        return Err(bad("trailing bytes after payload"));
    }
    Ok((w, h, payload.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn save_ppm(pixels: &[f64], size: usize, path: &Path) -> Result<()> {
    let bytes = encode_ppm(pixels, size, size)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| I2pError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| I2pError::io(path, e))
}

/// Loads a square PPM and checks its side length.
pub fn load_ppm(path: &Path, size: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| I2pError::io(path, e))?;
    let (w, h, px) = decode_ppm(&bytes)?;
    if w != size || h != size {
        return Err(I2pError::Shape(format!(
            "{} is {w}x{h}, expected {size}x{size}",
            path.display()
        )));
    }
    Ok(px)
}
