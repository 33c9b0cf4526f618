//! Binary PGM (P5, maxval 255) encoding for beat images.

use crate::error::{Error, Result};

/// Encodes `pixels` (row-major, one byte per pixel) as a P5 file.
pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width * height);
    let header = format!("P5\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(pixels);
    out
}

pub struct Decoded {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub pixels: Vec<u8>,
}

pub fn decode(bytes: &[u8]) -> Result<Decoded> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::contract("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::contract(format!("not a P5 file (magic {:?})", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::contract(format!("bad PGM header field {s:?}")))
    };
    let width = parse(&fields[1])?;
    let height = parse(&fields[2])?;
    let maxval = parse(&fields[3])? as u32;
    if maxval == 0 || maxval > 255 {
        return Err(Error::contract(format!("unsupported PGM maxval {maxval}")));
    }
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != width * height {
        return Err(Error::contract(format!(
            "PGM raster has {} bytes, expected {}",
            raster.len(),
            width * height
        )));
    }
    Ok(Decoded {
        width,
        height,
        maxval,
        pixels: raster.to_vec(),
    })
}
