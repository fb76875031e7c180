//! Binary PGM (P5) and grayscale PNG reading/writing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{quantize_u8, Image};
use crate::error::{Error, Result};

/// Loads an 8- or 16-bit grayscale PGM or PNG, scaling intensities by the
/// format's maximum value. The format is detected from the file contents.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes)
    } else if bytes.starts_with(b"P2") || bytes.starts_with(b"P6") || bytes.starts_with(b"P3") {
        Err(Error::UnsupportedImage(format!(
            "{}: only binary grayscale PGM (P5) is supported",
            path.display()
        )))
    } else {
        Err(Error::UnsupportedImage(format!(
            "{}: not a PGM or PNG file",
            path.display()
        )))
    }
}

/// Writes an 8-bit image, each value `round(intensity * 255)`. Paths ending
/// in `.png` are written as PNG, anything else as binary PGM.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let pixels: Vec<u8> = img.data().iter().map(|&v| quantize_u8(v)).collect();
    if is_png {
        let mut encoder = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer
            .finish()
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    } else {
        write!(out, "P5\n{} {}\n255\n", img.width(), img.height())
            .and_then(|_| out.write_all(&pixels))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedImage("truncated PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedImage("bad number in PGM header".into()))?;
    }
    // exactly one whitespace byte before the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedImage("missing whitespace after PGM header".into()));
    }
    pos += 1;

    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(Error::UnsupportedImage(format!("PGM maxval {maxval}")));
    }
    let n = width * height;
    let raster = &bytes[pos..];
    let data: Vec<f32> = if maxval < 256 {
        if raster.len() < n {
            return Err(Error::Truncated {
                needed: n,
                found: raster.len(),
            });
        }
        raster[..n]
            .iter()
            .map(|&b| (b as f32 / maxval as f32).min(1.0))
            .collect()
    } else {
        if raster.len() < 2 * n {
            return Err(Error::Truncated {
                needed: 2 * n,
                found: raster.len(),
            });
        }
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f32 / maxval as f32).min(1.0))
            .collect()
    };
    Image::new(width, height, data)
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let malformed = |e: png::DecodingError| Error::MalformedImage(format!("PNG: {e}"));
    let mut decoder = png::Decoder::new(BufReader::new(std::io::Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(malformed)?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedImage(format!(
            "PNG color type {:?}; only grayscale is supported",
            info.color_type
        )));
    }
    let depth = info.bit_depth;
    if !matches!(depth, png::BitDepth::Eight | png::BitDepth::Sixteen) {
        return Err(Error::UnsupportedImage(format!(
            "PNG bit depth {depth:?}; only 8 and 16 bits are supported"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::MalformedImage("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(malformed)?;
    let line = frame.line_size;
    let mut data = Vec::with_capacity(width * height);
    for row in buf.chunks(line).take(height) {
        match depth {
            png::BitDepth::Eight => data.extend(row[..width].iter().map(|&b| b as f32 / 255.0)),
            _ => data.extend(
                row[..2 * width]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0),
            ),
        }
    }
    Image::new(width, height, data)
}
