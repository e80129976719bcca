//! File formats: PFM disparity maps, 8-bit PNG images and masks, and CSV
//! tables.

mod pfm;
mod png;

pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use png::{colorize, read_mask_png, read_png, write_mask_png, write_png, write_rgb_png};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Renders rows as CSV with a header line. Floats use Rust's shortest
/// round-trip formatting, so output is byte-stable across runs.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
