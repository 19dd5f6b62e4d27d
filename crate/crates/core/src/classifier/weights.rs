//! Binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      b"ATXW"
//! version    u32 = 1
//! spec_hash  32 bytes, SHA-256 of the canonical architecture string
//! n_classes  u32
//! input_res  u32
//! n_weights  u64
//! weights    n_weights * f32
//! checksum   32 bytes, SHA-256 of everything above
//! ```
//!
//! The checksum catches bit rot and truncation; the spec hash refuses files
//! written for a different architecture. Weights stay f32 end to end, so a
//! save/load round trip reproduces the model bitwise.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ClassifierError, ClassifierModel};

const MAGIC: &[u8; 4] = b"ATXW";
const VERSION: u32 = 1;

pub fn save(model: &ClassifierModel, path: &Path) -> Result<(), ClassifierError> {
    let mut buf = Vec::with_capacity(56 + model.weight_count() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&model.spec_hash());
    buf.extend_from_slice(&model.n_classes().to_le_bytes());
    buf.extend_from_slice(&model.input_resolution().to_le_bytes());
    buf.extend_from_slice(&(model.weight_count() as u64).to_le_bytes());
    for w in model.weights() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    let checksum = Sha256::digest(&buf);
    buf.extend_from_slice(&checksum);
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ClassifierModel, ClassifierError> {
    let buf = fs::read(path)?;
    let malformed = |reason: &str| ClassifierError::MalformedWeights(reason.to_string());
    if buf.len() < 56 + 32 {
        return Err(malformed("file too short for header and checksum"));
    }
    let (body, checksum) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(ClassifierError::ChecksumMismatch);
    }
    if &body[0..4] != MAGIC {
        return Err(malformed("bad magic"));
    }
    if u32::from_le_bytes(body[4..8].try_into().unwrap()) != VERSION {
        return Err(malformed("unsupported version"));
    }
    let stored_hash = &body[8..40];
    let n_classes = u32::from_le_bytes(body[40..44].try_into().unwrap());
    let input_res = u32::from_le_bytes(body[44..48].try_into().unwrap());
    let n_weights = u64::from_le_bytes(body[48..56].try_into().unwrap()) as usize;
    let weight_bytes = &body[56..];
    if weight_bytes.len() != n_weights * 4 {
        return Err(malformed("weight payload length does not match header"));
    }
    let weights: Vec<f32> = weight_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = ClassifierModel::from_weights(n_classes, input_res, weights)?;
    let expected = model.spec_hash();
    if stored_hash != expected {
        return Err(ClassifierError::SpecMismatch {
            expected: hex(&expected),
            got: hex(stored_hash),
        });
    }
    Ok(model)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
