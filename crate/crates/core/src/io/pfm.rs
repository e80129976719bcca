//! Portable float map, grayscale variant only on output.
//!
//! Layout: `Pf\n<width> <height>\n<scale>\n` followed by `f32` samples, rows
//! stored bottom to top. A negative scale means little-endian. `PF` (RGB)
//! files are accepted on input and their first channel is kept.

use std::path::Path;

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::imageops::{DisparityMap, View};

pub fn encode_pfm(d: &DisparityMap) -> Vec<u8> {
    let (w, h) = d.shape();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(d.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

/// Splits off the next whitespace-delimited header token.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos)
        .then(|| std::str::from_utf8(&bytes[start..*pos]).ok())
        .flatten()
}

pub fn decode_pfm(bytes: &[u8], view: View) -> Result<DisparityMap> {
    let mut pos = 0;
    let bad = |pos: usize, msg: &str| Error::parse_offset(pos, msg);
    let channels = match token(bytes, &mut pos) {
        Some("Pf") => 1,
        Some("PF") => 3,
        _ => return Err(bad(0, "not a PFM file (expected Pf or PF)")),
    };
    let mut number = |what: &str| -> Result<&str> {
        token(bytes, &mut pos).ok_or_else(|| bad(pos, &format!("missing {what}")))
    };
    let w: usize = number("width")?
        .parse()
        .map_err(|_| bad(0, "invalid width"))?;
    let h: usize = number("height")?
        .parse()
        .map_err(|_| bad(0, "invalid height"))?;
    let scale: f64 = number("scale")?
        .parse()
        .map_err(|_| bad(0, "invalid scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad(pos, "scale must be non-zero"));
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let need = w * h * channels * 4;
    let data = bytes
        .get(pos..pos + need)
        .ok_or_else(|| bad(pos, &format!("expected {need} bytes of samples")))?;
    let mut values = vec![0.0; w * h];
    for (k, chunk) in data.chunks_exact(4 * channels).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row, x) = (k / w, k % w);
        values[(h - 1 - row) * w + x] = v as f64;
    }
    DisparityMap::new(w, h, values, view)
}

pub fn write_pfm(path: &Path, d: &DisparityMap) -> Result<()> {
    write_file(path, &encode_pfm(d))
}

pub fn read_pfm(path: &Path, view: View) -> Result<DisparityMap> {
    decode_pfm(&read_file(path)?, view).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let d =
            DisparityMap::new(3, 2, vec![0.0, 1.5, -2.25, 7.0, 41.0, 0.125], View::Left).unwrap();
        let bytes = encode_pfm(&d);
        assert!(bytes.starts_with(b"Pf\n3 2\n-1.0\n"));
        // bottom row first
        assert_eq!(&bytes[12..16], &7.0f32.to_le_bytes());
        assert_eq!(decode_pfm(&bytes, View::Left).unwrap(), d);
    }

    #[test]
    fn big_endian_and_rgb_inputs() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [2.5f32, 9.0, 9.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        assert_eq!(decode_pfm(&bytes, View::Right).unwrap().get(0, 0), 2.5);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(decode_pfm(b"P6\n1 1\n-1.0\n\0\0\0\0", View::Left).is_err());
        assert!(decode_pfm(b"Pf\n2 2\n-1.0\n\0\0\0\0", View::Left).is_err());
        assert!(decode_pfm(b"Pf\n1 1\n0\n\0\0\0\0", View::Left).is_err());
        assert!(decode_pfm(b"Pf\nx 1\n-1\n\0\0\0\0", View::Left).is_err());
    }
}
