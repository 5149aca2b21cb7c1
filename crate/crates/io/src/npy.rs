//! Row matrices in NPY form.

use std::path::Path;

use ndarray::Array2;
use ndarray_npy::{ReadNpyExt, WriteNpyExt};

use crate::error::{IoError, Result};

/// Encodes `rows` (all of length `cols`) as a little-endian `f64` NPY.
pub fn encode_rows<V: AsRef<[f64]>>(rows: &[V], cols: usize) -> Vec<u8> {
    let mut flat = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        assert_eq!(r.as_ref().len(), cols, "ragged rows");
        flat.extend_from_slice(r.as_ref());
    }
    let arr = Array2::from_shape_vec((rows.len(), cols), flat).expect("shape matches");
    let mut out = Vec::new();
    arr.write_npy(&mut out).expect("writing to memory cannot fail");
    out
}

/// Decodes a 2-D NPY into rows. `f64` is the canonical type; `f32` input is
/// widened with a warning.
pub fn decode_rows(bytes: &[u8], path: &Path) -> Result<Vec<Vec<f64>>> {
    let arr = match Array2::<f64>::read_npy(bytes) {
        Ok(a) => a,
        Err(first) => match Array2::<f32>::read_npy(bytes) {
            Ok(a) => {
                log::warn!("{}: float32 vectors widened to float64", path.display());
                a.mapv(f64::from)
            }
            Err(_) => return Err(IoError::format(path, format!("expected a 2-D float64 NPY array: {first}"))),
        },
    };
    Ok(arr.outer_iter().map(|r| r.to_vec()).collect())
}

/// 1-D `f64` NPY.
pub fn encode_vector(v: &[f64]) -> Vec<u8> {
    let mut out = Vec::new();
    ndarray::ArrayView1::from(v)
        .write_npy(&mut out)
        .expect("writing to memory cannot fail");
    out
}

pub fn decode_vector(bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    ndarray::Array1::<f64>::read_npy(bytes)
        .map(|a| a.to_vec())
        .map_err(|e| IoError::format(path, format!("expected a 1-D float64 NPY array: {e}")))
}
