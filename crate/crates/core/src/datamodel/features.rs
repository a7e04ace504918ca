//! Binary feature container.
//!
//! Layout (little-endian):
//! - magic `XFDF` (4 bytes)
//! - version: u32 = 1
//! - num_tracklets: u32
//! - T: u32
//! - C: u32
//! - payload: num_tracklets * T * C f32, tracklet-major then row-major

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::FrameFeatureSequence;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"XFDF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub feature_dim: usize,
    pub seq_len: usize,
    pub sequences: Vec<FrameFeatureSequence>,
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureFile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    read_feature_file_from(&bytes)
}

pub fn read_feature_file_from(bytes: &[u8]) -> Result<FeatureFile> {
    if bytes.len() < 4 {
        return Err(Error::ShapeMismatch(format!(
            "file too short for header: {} bytes",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            expected: FEATURE_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::ShapeMismatch(format!(
            "file too short for header: {} bytes",
            bytes.len()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != FEATURE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (n, t, c) = (word(2) as usize, word(3) as usize, word(4) as usize);
    if t == 0 || c == 0 {
        return Err(Error::ShapeMismatch(format!("header has T={t}, C={c}")));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(t)
        .and_then(|v| v.checked_mul(c))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::ShapeMismatch("header dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "payload is {} bytes, header implies {n}*{t}*{c}*4 = {expected}",
            payload.len()
        )));
    }

    let mut values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    let mut sequences = Vec::with_capacity(n);
    for index in 0..n {
        let data: Vec<f64> = values.by_ref().take(t * c).collect();
        let frames = Array2::from_shape_vec((t, c), data).expect("payload length checked");
        sequences.push(FrameFeatureSequence::new(frames, index)?);
    }
    Ok(FeatureFile {
        feature_dim: c,
        seq_len: t,
        sequences,
    })
}

/// Writes sequences as f32. All sequences must share one T×C shape.
pub fn write_feature_file(path: impl AsRef<Path>, sequences: &[FrameFeatureSequence]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_feature_file_to(&mut writer, sequences).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn write_feature_file_to<W: Write>(writer: &mut W, sequences: &[FrameFeatureSequence]) -> Result<()> {
    let (t, c) = sequences.first().map(|s| s.frames.dim()).unwrap_or((1, 1));
    if let Some(bad) = sequences.iter().find(|s| s.frames.dim() != (t, c)) {
        let (bt, bc) = bad.frames.dim();
        return Err(Error::ShapeMismatch(format!(
            "sequence {} is {bt}x{bc}, expected {t}x{c}",
            bad.tracklet_index
        )));
    }
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::ShapeMismatch(format!("{v} does not fit in u32")));
    let mut buf = Vec::with_capacity(HEADER_LEN + sequences.len() * t * c * 4);
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u32(sequences.len())?.to_le_bytes());
    buf.extend_from_slice(&to_u32(t)?.to_le_bytes());
    buf.extend_from_slice(&to_u32(c)?.to_le_bytes());
    for seq in sequences {
        for v in seq.frames.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    writer.write_all(&buf).map_err(|e| Error::io("<writer>", e))
}
