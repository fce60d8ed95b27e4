//! Binary PPM (`P6`) and PGM (`P5`) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes to `[H, W, 3]` in `[0, 1]`; grayscale is replicated to three
/// channels.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let unsupported = |format: &str| Error::UnsupportedFormat {
        path: origin.to_path_buf(),
        format: format.to_owned(),
    };
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        Some(m) if m[0] == b'P' && m[1].is_ascii_digit() => {
            return Err(unsupported(&String::from_utf8_lossy(m)))
        }
        _ => return Err(unsupported(sniff(bytes))),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        *f = header_number(bytes, &mut pos).ok_or_else(|| {
            Error::Data(format!("{}: malformed PNM header", origin.display()))
        })?;
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(Error::Data(format!("{}: zero image dimension", origin.display())));
    }
    if maxval != 255 {
        return Err(unsupported(&format!("PNM with maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Data(format!("{}: malformed PNM header", origin.display())));
    }
    pos += 1;
    let need = w * h * channels;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::Data(format!(
            "{}: truncated raster, expected {need} bytes, found {}",
            origin.display(),
            bytes.len().saturating_sub(pos)
        ))
    })?;
    let data = if channels == 3 {
        raster.iter().map(|&b| b as f32 / 255.0).collect()
    } else {
        raster
            .iter()
            .flat_map(|&b| [b as f32 / 255.0; 3])
            .collect()
    };
    Tensor::new(&[h, w, 3], data)
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes, path)
}

fn sniff(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG") {
        "PNG"
    } else if bytes.starts_with(&[0xff, 0xd8]) {
        "JPEG"
    } else if bytes.starts_with(b"DICM") || bytes.get(128..132) == Some(b"DICM") {
        "DICOM"
    } else {
        "unknown"
    }
}

/// Skips whitespace and `#` comments, then parses a decimal number.
fn header_number(bytes: &[u8], pos: &mut usize) -> Option<usize> {
    loop {
        match bytes.get(*pos)? {
            b'#' => {
                while *bytes.get(*pos)? != b'\n' {
                    *pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}

/// Quantizes `[0, 1]` values to bytes, rounding to nearest.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes an `[H, W, 3]` tensor in `[0, 1]` as P6.
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = dims3(img)?;
    if c != 3 {
        return Err(Error::Argument(format!("PPM needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Encodes raw 8-bit grayscale rows as P5.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::Argument(format!(
            "{} pixels for a {width}x{height} PGM",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub(crate) fn dims3(img: &Tensor) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::Shape(format!("expected an [H, W, C] image, got {s:?}"))),
    }
}
