//! `NVF1` dense field files and CSV grid export.
//!
//! Layout: magic, little-endian u32 width and height, f32 x-origin,
//! y-origin, x-spacing, y-spacing, then `width * height` interleaved
//! `(u, v)` f32 pairs in row-major order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{axis, FieldGrid, ScalarGrid};
use crate::error::{Error, Result};
use crate::model::io_support::{check_magic, Reader};

pub const FIELD_MAGIC: &[u8; 4] = b"NVF1";
pub const FIELD_HEADER_BYTES: usize = 4 + 2 * 4 + 4 * 4;

pub fn encode_field(grid: &FieldGrid) -> Result<Vec<u8>> {
    let (x0, dx) = FieldGrid::uniform_axis(&grid.xs)?;
    let (y0, dy) = FieldGrid::uniform_axis(&grid.ys)?;
    let mut out = Vec::with_capacity(FIELD_HEADER_BYTES + 8 * grid.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    for v in [x0, y0, dx, dy] {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for (u, v) in grid.u.iter().zip(&grid.v) {
        out.extend_from_slice(&(*u as f32).to_le_bytes());
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_field(bytes: &[u8]) -> Result<FieldGrid> {
    check_magic(bytes, FIELD_MAGIC)?;
    let mut r = Reader::new(bytes, 4);
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let [x0, y0, dx, dy] = [r.f32()?, r.f32()?, r.f32()?, r.f32()?];
    if width == 0 || height == 0 {
        return Err(Error::Shape(format!("empty {width}x{height} field")));
    }
    let expected = 8 * width * height;
    if r.remaining() < expected {
        return Err(Error::Truncated {
            needed: FIELD_HEADER_BYTES + expected,
            found: bytes.len(),
        });
    }
    if r.remaining() > expected {
        return Err(Error::Shape(format!(
            "{} trailing bytes after the field",
            r.remaining() - expected
        )));
    }
    let values = r.f32s(2 * width * height)?;
    let (u, v) = values.chunks_exact(2).map(|c| (c[0] as f64, c[1] as f64)).unzip();
    FieldGrid::new(
        axis(x0 as f64, dx as f64, width),
        axis(y0 as f64, dy as f64, height),
        u,
        v,
    )
}

/// Writes `grid` as NVF1. The grid axes must be evenly spaced.
pub fn save_field(grid: &FieldGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_field(grid)?).map_err(|e| Error::io(path, e))
}

pub fn load_field(path: impl AsRef<Path>) -> Result<FieldGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes)
}

/// One CSV row per grid row, comma separated.
pub fn write_csv_grid(grid: &ScalarGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in grid.data.chunks(grid.width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
