//! Distance matrix container.
//!
//! Layout (little-endian): magic `XFDD` · Q: u32 · G: u32 · stage: u8
//! (0 raw cosine, 1 re-ranked) · k1, k2, λ as 3 × f32 (zero for raw) ·
//! Q·G f32 payload, row-major.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{DistanceMatrix, DistanceStage, RerankParams};
use crate::error::{Error, Result};

pub const DISTANCE_MAGIC: [u8; 4] = *b"XFDD";
const HEADER_LEN: usize = 4 + 4 + 4 + 1 + 12;

pub fn write_distance_matrix_to<W: Write>(writer: &mut W, d: &DistanceMatrix) -> Result<()> {
    let (q, g) = d.values.dim();
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::ShapeMismatch(format!("{v} does not fit in u32")));
    let mut buf = Vec::with_capacity(HEADER_LEN + q * g * 4);
    buf.extend_from_slice(&DISTANCE_MAGIC);
    buf.extend_from_slice(&dim(q)?.to_le_bytes());
    buf.extend_from_slice(&dim(g)?.to_le_bytes());
    buf.push(match d.stage {
        DistanceStage::RawCosine => 0,
        DistanceStage::Reranked => 1,
    });
    let params = match d.params {
        Some(p) => [p.k1 as f32, p.k2 as f32, p.lambda as f32],
        None => [0.0; 3],
    };
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    for v in d.values.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    writer.write_all(&buf).map_err(|e| Error::io("<writer>", e))
}

pub fn write_distance_matrix(path: impl AsRef<Path>, d: &DistanceMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_distance_matrix_to(&mut buf, d)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_distance_matrix_from(bytes: &[u8]) -> Result<DistanceMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::ShapeMismatch(format!(
            "distance file too short: {} bytes",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != DISTANCE_MAGIC {
        return Err(Error::BadMagic {
            expected: DISTANCE_MAGIC,
            found: magic,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let (q, g) = (u32_at(4), u32_at(8));
    let stage = match bytes[12] {
        0 => DistanceStage::RawCosine,
        1 => DistanceStage::Reranked,
        other => return Err(Error::ShapeMismatch(format!("unknown stage byte {other}"))),
    };
    let params = match stage {
        DistanceStage::RawCosine => None,
        DistanceStage::Reranked => {
            let mut p = RerankParams::new(f32_at(13) as usize, f32_at(17) as usize, 0.0);
            p.lambda = f32_at(21) as f64;
            Some(p)
        }
    };
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != q * g * 4 {
        return Err(Error::ShapeMismatch(format!(
            "payload is {} bytes, header implies {q}*{g}*4",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(DistanceMatrix {
        values: Array2::from_shape_vec((q, g), values).expect("length checked"),
        stage,
        params,
    })
}

pub fn read_distance_matrix(path: impl AsRef<Path>) -> Result<DistanceMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_distance_matrix_from(&bytes)
}
