//! Versioned binary checkpoints.
//!
//! Layout: magic string, format version, mapping kind, entity count,
//! relation count, dimension, then both embedding tables as row-major
//! little-endian `f32`, then `w` and `b` as little-endian `f64`.
//! A file read back and written again is byte-identical.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::unkge::{Matrix, ModelParams, ScoreMapping};

const MAGIC: &[u8; 8] = b"UNKGCKPT";
const FORMAT_VERSION: u32 = 1;

/// SHA-256 of the serialized checkpoint; ties calibration artifacts to
/// the exact model they were computed with.
pub type Fingerprint = [u8; 32];

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown score mapping tag {0}")]
    BadMapping(u8),
    #[error("checkpoint contains non-finite values")]
    NonFinite,
    #[error("checkpoint shape overflows memory limits")]
    BadShape,
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn mapping_tag(mapping: ScoreMapping) -> u8 {
    match mapping {
        ScoreMapping::Logistic => 0,
        ScoreMapping::Rectified => 1,
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u8(mapping_tag(params.mapping))?;
    w.write_u64::<LittleEndian>(params.n_entities() as u64)?;
    w.write_u64::<LittleEndian>(params.n_relations() as u64)?;
    w.write_u64::<LittleEndian>(params.dim() as u64)?;
    for &v in params.entity_emb.iter() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    for &v in params.relation_emb.iter() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    w.write_f64::<LittleEndian>(params.w)?;
    w.write_f64::<LittleEndian>(params.b)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mapping = match r.read_u8()? {
        0 => ScoreMapping::Logistic,
        1 => ScoreMapping::Rectified,
        tag => return Err(CheckpointError::BadMapping(tag)),
    };
    let n_entities = r.read_u64::<LittleEndian>()? as usize;
    let n_relations = r.read_u64::<LittleEndian>()? as usize;
    let dim = r.read_u64::<LittleEndian>()? as usize;
    let cells = n_entities
        .checked_mul(dim)
        .and_then(|e| n_relations.checked_mul(dim).map(|r| (e, r)));
    let (entity_cells, relation_cells) = cells.ok_or(CheckpointError::BadShape)?;

    let mut read_matrix = |rows: usize, cells: usize| -> Result<Matrix, CheckpointError> {
        let mut data = Vec::with_capacity(cells);
        for _ in 0..cells {
            data.push(r.read_f32::<LittleEndian>()? as f64);
        }
        Ok(Matrix::from_vec(rows, dim, data))
    };
    let entity_emb = read_matrix(n_entities, entity_cells)?;
    let relation_emb = read_matrix(n_relations, relation_cells)?;
    let w = r.read_f64::<LittleEndian>()?;
    let b = r.read_f64::<LittleEndian>()?;
    let params = ModelParams {
        entity_emb,
        relation_emb,
        w,
        b,
        mapping,
    };
    if !params.is_finite() {
        return Err(CheckpointError::NonFinite);
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// The checkpoint serialization as an in-memory buffer.
pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params).expect("in-memory writes cannot fail");
    buf
}

/// Fingerprint of the model as it would be stored on disk.
pub fn fingerprint(params: &ModelParams) -> Fingerprint {
    let digest = Sha256::digest(checkpoint_bytes(params));
    digest.into()
}
