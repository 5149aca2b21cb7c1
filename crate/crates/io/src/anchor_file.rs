//! `anchor.gmmd`: a fitted anchor model in one file.
//!
//! Layout: the 8-byte magic `GMMDANCH`, a little-endian `u64` header length,
//! a JSON header, then NPY blobs (`mean`, `std`, `anchor_vectors`) at the
//! offsets the header lists, relative to the end of the header.

use std::path::Path;

use gmmd_core::anchor::{AnchorModel, Provenance};
use gmmd_core::gram::Standardizer;
use serde::{Deserialize, Serialize};

use crate::error::{read, write_atomic, IoError, Result};
use crate::npy::{decode_rows, decode_vector, encode_rows, encode_vector};

pub const MAGIC: &[u8; 8] = b"GMMDANCH";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Blob {
    name: String,
    offset: u64,
    length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    toolkit_version: String,
    backbone_id: String,
    layer_index: usize,
    gamma_med: f64,
    /// `gamma_med` as raw IEEE bits, authoritative on load.
    gamma_med_bits: String,
    epsilon_floor: f64,
    n_anchor: usize,
    dim: usize,
    provenance: Provenance,
    blobs: Vec<Blob>,
}

pub fn encode_anchor(model: &AnchorModel) -> Vec<u8> {
    let blobs_data = [
        ("mean", encode_vector(&model.standardizer.mean)),
        ("std", encode_vector(&model.standardizer.std)),
        ("anchor_vectors", encode_rows(&model.anchor_vectors, model.dim())),
    ];
    let mut offset = 0u64;
    let blobs = blobs_data
        .iter()
        .map(|(name, bytes)| {
            let b = Blob {
                name: name.to_string(),
                offset,
                length: bytes.len() as u64,
            };
            offset += bytes.len() as u64;
            b
        })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        toolkit_version: gmmd_core::VERSION.to_string(),
        backbone_id: model.backbone_id.clone(),
        layer_index: model.layer_index,
        gamma_med: model.gamma_med,
        gamma_med_bits: format!("{:016x}", model.gamma_med.to_bits()),
        epsilon_floor: model.standardizer.epsilon_floor,
        n_anchor: model.len(),
        dim: model.dim(),
        provenance: model.provenance.clone(),
        blobs,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, bytes) in &blobs_data {
        out.extend_from_slice(bytes);
    }
    out
}

/// Parses and validates an anchor file. `path` is only used in messages.
pub fn decode_anchor(bytes: &[u8], path: &Path) -> Result<AnchorModel> {
    let bad = |m: &str| IoError::format(path, m);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not an anchor file (bad magic)"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..data_start]).map_err(|e| IoError::format(path, e))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported anchor format version {}", header.format_version)));
    }
    let blob = |name: &str| -> Result<&[u8]> {
        let b = header
            .blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| bad(&format!("missing blob {name}")))?;
        let start = data_start + b.offset as usize;
        let end = start + b.length as usize;
        bytes.get(start..end).ok_or_else(|| bad(&format!("blob {name} out of range")))
    };
    let mean = decode_vector(blob("mean")?, path)?;
    let std = decode_vector(blob("std")?, path)?;
    let anchor_vectors = decode_rows(blob("anchor_vectors")?, path)?;
    let gamma_med = u64::from_str_radix(&header.gamma_med_bits, 16)
        .map(f64::from_bits)
        .map_err(|_| bad("gamma_med_bits is not hex"))?;
    if mean.len() != header.dim || std.len() != header.dim || anchor_vectors.len() != header.n_anchor {
        return Err(bad("blob shapes disagree with the header"));
    }
    if anchor_vectors.iter().any(|r| r.len() != header.dim) {
        return Err(bad("anchor vector length disagrees with the header"));
    }
    let model = AnchorModel {
        backbone_id: header.backbone_id,
        layer_index: header.layer_index,
        standardizer: Standardizer {
            mean,
            std,
            epsilon_floor: header.epsilon_floor,
        },
        gamma_med,
        anchor_vectors,
        provenance: header.provenance,
    };
    let recomputed = model.recompute_gamma_med()?;
    if recomputed.to_bits() != gamma_med.to_bits() {
        return Err(IoError::Corruption {
            path: path.to_path_buf(),
            message: format!("stored gamma_med {gamma_med:e} but the vectors give {recomputed:e}"),
        });
    }
    Ok(model)
}

pub fn save_anchor(path: &Path, model: &AnchorModel) -> Result<()> {
    write_atomic(path, &encode_anchor(model))
}

pub fn load_anchor(path: &Path) -> Result<AnchorModel> {
    decode_anchor(&read(path)?, path)
}
