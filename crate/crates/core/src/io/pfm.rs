use std::fs;
use std::path::{Path, PathBuf};

use super::pgm::{decode_pgm, encode_pgm};
use crate::error::{Error, Result};
use crate::regression::DisparityMap;

/// Single-channel PFM raster. `data` is row-major with the top row first;
/// the bottom-row-first file order is handled by the codec.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    /// Negative for little-endian payloads.
    pub scale: f32,
    pub data: Vec<f32>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    /// Reads up to the next newline and consumes it.
    fn line(&mut self, what: &str) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.err(format!("unterminated {what} line")))?;
        let text = std::str::from_utf8(&rest[..end]).map_err(|_| self.err(format!("{what} line is not text")))?;
        self.pos += end + 1;
        Ok(text.strip_suffix('\r').unwrap_or(text))
    }
}

pub fn encode_pfm(image: &PfmImage) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", image.width, image.height).into_bytes();
    out.reserve(4 * image.data.len());
    for row in image.data.chunks(image.width.max(1)).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmImage> {
    let mut cur = Cursor { bytes, pos: 0 };
    match cur.line("magic")? {
        "Pf" => {}
        "PF" => {
            return Err(Error::Parse {
                offset: 0,
                message: "three-channel PFM is not supported".into(),
            })
        }
        other => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("bad magic {other:?}"),
            })
        }
    }
    let dims_at = cur.pos;
    let dims = cur.line("dimension")?;
    let dims_err = |m: &str| Error::Parse {
        offset: dims_at,
        message: m.to_string(),
    };
    let mut it = dims.split_ascii_whitespace();
    let mut dim = || -> Result<usize> {
        let t = it.next().ok_or_else(|| dims_err("expected width and height"))?;
        match t.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(dims_err(&format!("bad dimension {t:?}"))),
        }
    };
    let width = dim()?;
    let height = dim()?;
    if it.next().is_some() {
        return Err(dims_err("trailing tokens after width and height"));
    }
    let scale_at = cur.pos;
    let scale_text = cur.line("scale")?;
    let scale: f32 = match scale_text.trim().parse::<f32>() {
        Ok(s) if s != 0.0 && s.is_finite() => s,
        _ => {
            return Err(Error::Parse {
                offset: scale_at,
                message: format!("bad scale {scale_text:?}"),
            })
        }
    };
    let n = width
        .checked_mul(height)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| dims_err("image too large"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < 4 * n {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("payload has {} bytes, expected {}", payload.len(), 4 * n),
        });
    }
    if payload.len() > 4 * n {
        return Err(Error::Parse {
            offset: cur.pos + 4 * n,
            message: format!("{} trailing bytes after payload", payload.len() - 4 * n),
        });
    }
    let little = scale < 0.0;
    let mut data = vec![0.0f32; n];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (fy, x) = (k / width, k % width);
        data[(height - 1 - fy) * width + x] = v;
    }
    Ok(PfmImage {
        width,
        height,
        scale,
        data,
    })
}

/// Path of the validity mask stored next to a PFM file: `a/b.pfm` maps to
/// `a/b.mask.pgm`.
pub fn mask_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.mask.pgm"))
}

/// Writes `map` as little-endian PFM. Invalid pixels are stored as 0 and
/// flagged in a sibling mask (255 valid, 0 invalid); the mask is only
/// present when some pixel is invalid.
pub fn write_pfm(map: &DisparityMap, path: &Path) -> Result<()> {
    let image = PfmImage {
        width: map.width,
        height: map.height,
        scale: -1.0,
        data: map
            .values
            .iter()
            .zip(&map.valid)
            .map(|(&v, &ok)| if ok && v.is_finite() { v as f32 } else { 0.0 })
            .collect(),
    };
    fs::write(path, encode_pfm(&image)).map_err(|e| Error::io(path, e))?;
    let mask = mask_path(path);
    if map.valid.iter().all(|&v| v) {
        if mask.exists() {
            fs::remove_file(&mask).map_err(|e| Error::io(&mask, e))?;
        }
    } else {
        let pixels: Vec<u8> = map.valid.iter().map(|&v| if v { 255 } else { 0 }).collect();
        fs::write(&mask, encode_pgm(map.width, map.height, &pixels)?).map_err(|e| Error::io(&mask, e))?;
    }
    Ok(())
}

/// Reads a PFM file plus its mask sidecar, if any. Non-finite samples are
/// also treated as invalid.
pub fn read_pfm(path: &Path) -> Result<DisparityMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let image = decode_pfm(&bytes)?;
    let mut map = DisparityMap::new(
        image.width,
        image.height,
        image.data.iter().map(|&v| v as f64).collect(),
    )?;
    let mask = mask_path(path);
    if mask.exists() {
        let bytes = fs::read(&mask).map_err(|e| Error::io(&mask, e))?;
        let m = decode_pgm(&bytes)?;
        if (m.width, m.height) != (image.width, image.height) {
            return Err(Error::invalid(format!(
                "mask {} is {}x{}, map is {}x{}",
                mask.display(),
                m.width,
                m.height,
                image.width,
                image.height
            )));
        }
        for (valid, &m) in map.valid.iter_mut().zip(&m.data) {
            *valid &= m != 0;
        }
    }
    Ok(map)
}
