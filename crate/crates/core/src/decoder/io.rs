//! Binary checkpoint and visual-feature files. All integers and floats are
//! little-endian.
//!
//! Checkpoint: `COGTCKPT`, u32 version, u32-length-prefixed `key=value`
//! config text, u32 parameter count, then per parameter: u32-length-prefixed
//! name, u32 rank, u32 dims, raw f32 values.
//!
//! Visual features: `COGTVIS`, u32 m, u32 dim, `m * dim` f32 values.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use thiserror::Error;

use super::{Decoder, DecoderConfig, DecoderError, VisualFeatures};
use crate::cgm::PredictionMode;
use crate::tensor::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"COGTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const VISUAL_MAGIC: &[u8; 7] = b"COGTVIS";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
}

/// A trained decoder plus the prediction mode it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub decoder: Decoder<f32>,
    pub mode: PredictionMode,
}

fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_bytes(w: &mut impl Write, bytes: &[u8]) -> io::Result<()> {
    write_u32(w, bytes.len() as u32)?;
    w.write_all(bytes)
}

fn read_string(r: &mut impl Read, limit: usize) -> Result<String, FormatError> {
    let len = read_u32(r)? as usize;
    if len > limit {
        return Err(FormatError::Corrupt(format!("string of {len} bytes")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| FormatError::Corrupt(e.to_string()))
}

fn write_f32s(w: &mut impl Write, data: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_f32s(r: &mut impl Read, len: usize) -> io::Result<Vec<f32>> {
    let mut buf = vec![0u8; len * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<(), FormatError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(w, CHECKPOINT_VERSION)?;
    let mut kv = ckpt.decoder.config().to_kv();
    kv.insert("mode".into(), ckpt.mode.to_string());
    let text = crate::config::format_kv(&kv);
    write_bytes(w, text.as_bytes())?;
    let params = ckpt.decoder.params();
    write_u32(w, params.len() as u32)?;
    for (name, t) in params.iter() {
        write_bytes(w, name.as_bytes())?;
        write_u32(w, t.shape().len() as u32)?;
        for &d in t.shape() {
            write_u32(w, d as u32)?;
        }
        write_f32s(w, t.data())?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint, FormatError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: "COGTCKPT",
        });
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version(version));
    }
    let text = read_string(r, 1 << 20)?;
    let kv: BTreeMap<String, String> = crate::config::parse_kv(&text)
        .map_err(FormatError::Corrupt)?;
    let mut cfg = DecoderConfig::desk(0, 0, 0);
    cfg.apply_kv(&kv)?;
    let mode = match kv.get("mode") {
        Some(m) => m.parse().map_err(FormatError::Corrupt)?,
        None => PredictionMode::Cogt,
    };
    let count = read_u32(r)? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = read_string(r, 4096)?;
        let rank = read_u32(r)? as usize;
        if rank > 4 {
            return Err(FormatError::Corrupt(format!("rank {rank} for {name}")));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<io::Result<_>>()?;
        let len: usize = shape.iter().product();
        let data = read_f32s(r, len)?;
        let t = Tensor::new(shape, data).map_err(|e| FormatError::Corrupt(e.to_string()))?;
        params.push(name, t);
    }
    let decoder = Decoder::from_params(cfg, params)?;
    Ok(Checkpoint { decoder, mode })
}

pub fn write_visual_features(w: &mut impl Write, v: &VisualFeatures) -> Result<(), FormatError> {
    w.write_all(VISUAL_MAGIC)?;
    write_u32(w, v.slots() as u32)?;
    write_u32(w, v.dim() as u32)?;
    write_f32s(w, v.vectors().data())?;
    Ok(())
}

pub fn read_visual_features(
    r: &mut impl Read,
    source_id: impl Into<String>,
) -> Result<VisualFeatures, FormatError> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != VISUAL_MAGIC {
        return Err(FormatError::BadMagic { expected: "COGTVIS" });
    }
    let m = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    if m.saturating_mul(dim) > 1 << 26 {
        return Err(FormatError::Corrupt(format!("{m}x{dim} features")));
    }
    let data = read_f32s(r, m * dim)?;
    let t = Tensor::matrix(m, dim, data).map_err(|e| FormatError::Corrupt(e.to_string()))?;
    Ok(VisualFeatures::new(t, source_id)?)
}
