//! Binary Netpbm codecs: PGM "P5" read/write and PPM "P6" write.
//!
//! Writes always emit the canonical header `P5\n<w> <h>\n255\n`, so a
//! write -> read -> write cycle is byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::{GrayImage, Pixels};

/// Pull one whitespace/comment-separated ASCII token starting at `*pos`.
fn next_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    // skip whitespace and '#' comments
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format {
            offset: start,
            detail: "expected an ASCII integer".into(),
        });
    }
    let mut value = 0usize;
    for &b in &bytes[start..*pos] {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((b - b'0') as usize))
            .ok_or(Error::Format { offset: start, detail: "integer overflow".into() })?;
    }
    Ok(value)
}

/// Decode a binary PGM ("P5", maxval 255) byte buffer.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format { offset: 0, detail: "bad magic, expected \"P5\"".into() });
    }
    let mut pos = 2;
    let width = next_token(bytes, &mut pos)?;
    let height = next_token(bytes, &mut pos)?;
    let maxval_at = pos;
    let maxval = next_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::Format {
            offset: maxval_at,
            detail: format!("maxval must be 255, got {maxval}"),
        });
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format {
            offset: pos,
            detail: "expected single whitespace before payload".into(),
        });
    }
    pos += 1;
    if width == 0 || height == 0 {
        return Err(Error::Format { offset: 2, detail: "zero extent".into() });
    }
    let need = width * height;
    if bytes.len() - pos < need {
        return Err(Error::Format {
            offset: bytes.len(),
            detail: format!("truncated payload: need {need} bytes, have {}", bytes.len() - pos),
        });
    }
    GrayImage::from_bytes(width, height, bytes[pos..pos + need].to_vec())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

/// Encode an 8-bit image as binary PGM.
pub fn encode_pgm(image: &GrayImage) -> Result<Vec<u8>> {
    let data = match &image.pixels {
        Pixels::Byte(b) => b,
        Pixels::Real(_) => {
            return Err(Error::Usage(
                "write_pgm expects 8-bit form; call to_bytes() first".into(),
            ))
        }
    };
    let mut out = Vec::with_capacity(data.len() + 32);
    write!(out, "P5\n{} {}\n255\n", image.width, image.height).expect("vec write");
    out.extend_from_slice(data);
    Ok(out)
}

pub fn write_pgm(image: &GrayImage, path: &Path) -> Result<()> {
    let bytes = encode_pgm(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write interleaved RGB rows as binary PPM "P6".
pub fn write_ppm(rgb: &[u8], width: usize, height: usize, path: &Path) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Usage(format!(
            "write_ppm: {width}x{height} needs {} bytes, got {}",
            width * height * 3,
            rgb.len()
        )));
    }
    let mut out = Vec::with_capacity(rgb.len() + 32);
    write!(out, "P6\n{width} {height}\n255\n").expect("vec write");
    out.extend_from_slice(rgb);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
