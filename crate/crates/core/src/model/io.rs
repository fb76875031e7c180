//! `NVM1` model files: magic, then little-endian `beta` (f32 bits),
//! `n_embed`, `n_layers`, `layer_size` as u32, then `B` row-major and each
//! layer's weights (row-major) followed by its biases, all f32.

use std::fs;
use std::path::Path;

use super::{Dense, DisplacementModel, EmbeddingMatrix, ModelConfig, NetworkParams};
use crate::error::{Error, Result};
use crate::real::Real;

pub const MODEL_MAGIC: &[u8; 4] = b"NVM1";
pub const MODEL_HEADER_BYTES: usize = 4 + 4 * 4;

pub(crate) fn check_magic(bytes: &[u8], magic: &[u8; 4]) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            needed: 4,
            found: bytes.len(),
        });
    }
    if &bytes[..4] == magic {
        return Ok(());
    }
    if bytes[..3] == magic[..3] {
        return Err(Error::VersionMismatch {
            expected: magic[3] as char,
            found: bytes[3] as char,
        });
    }
    Err(Error::BadMagic {
        expected: String::from_utf8_lossy(magic).into_owned(),
        found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
    })
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], pos: usize) -> Self {
        Reader { bytes, pos }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                needed: end,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Serializes the model in 32-bit precision.
pub fn encode_model<T: Real>(model: &DisplacementModel<T>) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::with_capacity(MODEL_HEADER_BYTES + 4 * c.param_count());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&c.beta.to_bits().to_le_bytes());
    for v in [c.n_embed, c.n_layers, c.layer_size] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let mut put = |v: T| out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    for row in model.embedding().rows() {
        put(row[0]);
        put(row[1]);
    }
    for v in model.params().iter() {
        put(*v);
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<DisplacementModel<f32>> {
    check_magic(bytes, MODEL_MAGIC)?;
    let mut r = Reader::new(bytes, 4);
    let beta = f32::from_bits(r.u32()?);
    let config = ModelConfig {
        beta,
        n_embed: r.u32()? as usize,
        n_layers: r.u32()? as usize,
        layer_size: r.u32()? as usize,
    };
    config
        .validate()
        .map_err(|e| Error::Shape(format!("header: {e}")))?;
    let expected = 4 * config.param_count();
    if r.remaining() != expected {
        return if r.remaining() < expected {
            Err(Error::Truncated {
                needed: MODEL_HEADER_BYTES + expected,
                found: bytes.len(),
            })
        } else {
            Err(Error::Shape(format!(
                "{} trailing bytes after the parameters",
                r.remaining() - expected
            )))
        };
    }
    let b = r.f32s(2 * config.n_embed)?;
    let embedding = EmbeddingMatrix::from_rows(b.chunks_exact(2).map(|c| [c[0], c[1]]).collect())?;
    let mut layers = Vec::new();
    for w in config.layer_widths().windows(2) {
        layers.push(Dense {
            fan_in: w[0],
            fan_out: w[1],
            weights: r.f32s(w[0] * w[1])?,
            biases: r.f32s(w[1])?,
        });
    }
    DisplacementModel::from_parts(config, embedding, NetworkParams { layers })
}

pub fn save_model<T: Real>(model: &DisplacementModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

/// Reads a model; any defect yields an error and no partial model.
pub fn load_model(path: impl AsRef<Path>) -> Result<DisplacementModel<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
