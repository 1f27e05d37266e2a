use crate::error::{Error, Result};

/// Binary (P5) grayscale raster. Samples are widened to `u16` so that both
/// 8-bit and 16-bit files decode to the same type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

/// 8-bit P5 encoding with the minimal header `P5\nW H\n255\n`.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::invalid(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(b'#') => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            _ => return pos,
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    let err = |message: String| Error::Parse { offset: start, message };
    if start == *pos {
        return Err(err(format!("expected {what}")));
    }
    let text = std::str::from_utf8(&bytes[start..*pos]).unwrap_or_default();
    text.parse().map_err(|_| err(format!("{what} {text:?} out of range")))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<PgmImage> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::Parse {
            offset: 0,
            message: "expected P5 magic".into(),
        });
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval_at = skip_space_and_comments(bytes, pos);
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: 2,
            message: format!("empty image {width}x{height}"),
        });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse {
            offset: maxval_at,
            message: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::Parse {
                offset: pos,
                message: "expected a single whitespace byte after maxval".into(),
            })
        }
    }
    let depth = if maxval > 255 { 2 } else { 1 };
    let n = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(depth))
        .ok_or_else(|| Error::Parse {
            offset: 2,
            message: "image too large".into(),
        })?;
    let payload = &bytes[pos..];
    if payload.len() < n {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("payload has {} bytes, expected {n}", payload.len()),
        });
    }
    if payload.len() > n {
        return Err(Error::Parse {
            offset: pos + n,
            message: format!("{} trailing bytes after payload", payload.len() - n),
        });
    }
    let data: Vec<u16> = if depth == 1 {
        payload.iter().map(|&b| b as u16).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(k) = data.iter().position(|&v| v as usize > maxval) {
        return Err(Error::Parse {
            offset: pos + k * depth,
            message: format!("sample {} exceeds maxval {maxval}", data[k]),
        });
    }
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u16,
        data,
    })
}
