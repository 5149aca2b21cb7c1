//! Controlled degradations: 20 distortion types at 10 severity levels.

pub mod ops;
pub mod table;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::seed::derive_seed;

pub use table::{parameter_rows, row, severity_params, DistortionRow, LEVEL_COUNT, TABLE, TYPE_COUNT};

/// A distortion operator with concrete parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Distortion {
    GaussianNoise { sigma: f64 },
    MultiplicativeNoise { sigma: f64 },
    Brighten { gamma: f64 },
    Darken { gamma: f64 },
    Jitter { amplitude: f64 },
    Patches { size: usize, count: usize },
    Pixelate { factor: usize },
    Quantization { bits: u32 },
    Fog { alpha: f64 },
    ColorCastCool { shift: f64 },
    ChromaticAberration { shift: usize },
    SparseSampling { fraction: f64 },
    Jpeg { quality: u8 },
    GaussianBlur { sigma: f64 },
    LensBlur { radius: usize },
    MotionBlur { length: usize },
    TiltStretch { scale: f64 },
    Vignette { strength: f64 },
    ContrastCompression { alpha: f64 },
    NonUniformBlur { sigma_lo: f64, sigma_hi: f64 },
}

impl Distortion {
    /// Operator for a tabulated (type, level) cell.
    pub fn from_table(type_id: u8, level: u8) -> Result<Self> {
        let r = row(type_id)?;
        table::check_level(level)?;
        let [a, b] = r.values[usize::from(level - 1)];
        let int = |v: f64| v as usize;
        Ok(match type_id {
            1 => Distortion::GaussianNoise { sigma: a },
            2 => Distortion::MultiplicativeNoise { sigma: a },
            3 => Distortion::Brighten { gamma: a },
            4 => Distortion::Darken { gamma: a },
            5 => Distortion::Jitter { amplitude: a },
            6 => Distortion::Patches {
                size: int(a),
                count: int(b),
            },
            7 => Distortion::Pixelate { factor: int(a) },
            8 => Distortion::Quantization { bits: a as u32 },
            9 => Distortion::Fog { alpha: a },
            10 => Distortion::ColorCastCool { shift: a },
            11 => Distortion::ChromaticAberration { shift: int(a) },
            12 => Distortion::SparseSampling { fraction: a },
            13 => Distortion::Jpeg { quality: a as u8 },
            14 => Distortion::GaussianBlur { sigma: a },
            15 => Distortion::LensBlur { radius: int(a) },
            16 => Distortion::MotionBlur { length: int(a) },
            17 => Distortion::TiltStretch { scale: a },
            18 => Distortion::Vignette { strength: a },
            19 => Distortion::ContrastCompression { alpha: a },
            _ => Distortion::NonUniformBlur {
                sigma_lo: a,
                sigma_hi: b,
            },
        })
    }

    pub fn apply(&self, img: &ImageBuffer, seed: u64) -> Result<ImageBuffer> {
        Ok(match *self {
            Distortion::GaussianNoise { sigma } => ops::gaussian_noise(img, sigma, seed)?,
            Distortion::MultiplicativeNoise { sigma } => ops::multiplicative_noise(img, sigma, seed)?,
            Distortion::Brighten { gamma } | Distortion::Darken { gamma } => ops::gamma_curve(img, gamma),
            Distortion::Jitter { amplitude } => ops::jitter(img, amplitude, seed),
            Distortion::Patches { size, count } => ops::patches(img, size, count, seed)?,
            Distortion::Pixelate { factor } => ops::pixelate(img, factor)?,
            Distortion::Quantization { bits } => ops::quantize(img, bits)?,
            Distortion::Fog { alpha } => ops::fog(img, alpha),
            Distortion::ColorCastCool { shift } => ops::color_cast_cool(img, shift),
            Distortion::ChromaticAberration { shift } => ops::chromatic_aberration(img, shift as isize),
            Distortion::SparseSampling { fraction } => ops::sparse_sampling(img, fraction, seed)?,
            Distortion::Jpeg { quality } => ops::jpeg(img, quality)?,
            Distortion::GaussianBlur { sigma } => ops::gaussian_blur(img, sigma),
            Distortion::LensBlur { radius } => ops::lens_blur(img, radius),
            Distortion::MotionBlur { length } => ops::motion_blur(img, length),
            Distortion::TiltStretch { scale } => ops::tilt_stretch(img, scale)?,
            Distortion::Vignette { strength } => ops::vignette(img, strength),
            Distortion::ContrastCompression { alpha } => ops::contrast_compression(img, alpha),
            Distortion::NonUniformBlur { sigma_lo, sigma_hi } => {
                ops::non_uniform_blur(img, sigma_lo, sigma_hi)
            }
        })
    }
}

/// One cell of the degradation matrix resolved to its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub type_id: u8,
    pub kadid_tag: String,
    pub level: u8,
    pub resolved_params: BTreeMap<String, f64>,
    pub distortion: Distortion,
}

impl DegradationSpec {
    pub fn new(type_id: u8, level: u8) -> Result<Self> {
        let r = row(type_id)?;
        Ok(Self {
            type_id,
            kadid_tag: r.kadid_tag.to_string(),
            level,
            resolved_params: severity_params(type_id, level)?
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            distortion: Distortion::from_table(type_id, level)?,
        })
    }

    /// Directory name `<typeId>_<tag>` used for degraded image trees.
    pub fn dir_name(&self) -> String {
        format!("{}_{}", self.type_id, self.kadid_tag)
    }
}

pub fn degrade(img: &ImageBuffer, spec: &DegradationSpec, seed: u64) -> Result<ImageBuffer> {
    spec.distortion.apply(img, seed)
}

/// Seed for image `index` of cell (type, level).
pub fn image_seed(seed: u64, type_id: u8, level: u8, index: usize) -> u64 {
    derive_seed(seed, &[u64::from(type_id), u64::from(level), index as u64])
}

pub type DegradationMatrix = BTreeMap<(u8, u8), Vec<ImageBuffer>>;

/// Degrades one cell: every reference image under the same spec.
pub fn degrade_cell(refs: &[(&str, &ImageBuffer)], spec: &DegradationSpec, seed: u64) -> Result<Vec<ImageBuffer>> {
    refs.par_iter()
        .enumerate()
        .map(|(i, (id, img))| {
            degrade(img, spec, image_seed(seed, spec.type_id, spec.level, i))
                .map_err(|e| e.in_cell(spec.type_id, spec.level, *id))
        })
        .collect()
}

/// Every reference image under every (type, level) in `types` × 1..=10.
pub fn build_degradation_matrix_for(
    refs: &[(&str, &ImageBuffer)],
    types: &[u8],
    seed: u64,
) -> Result<DegradationMatrix> {
    if refs.is_empty() {
        return Err(Error::invalid("no reference images"));
    }
    let cells: Vec<DegradationSpec> = types
        .iter()
        .flat_map(|&t| (1..=LEVEL_COUNT).map(move |l| DegradationSpec::new(t, l)))
        .collect::<Result<_>>()?;
    cells
        .par_iter()
        .map(|spec| Ok(((spec.type_id, spec.level), degrade_cell(refs, spec, seed)?)))
        .collect()
}

/// The full 20 × 10 matrix. Image ids are positional.
pub fn build_degradation_matrix(refs: &[ImageBuffer], seed: u64) -> Result<DegradationMatrix> {
    let ids: Vec<String> = (0..refs.len()).map(|i| i.to_string()).collect();
    let named: Vec<(&str, &ImageBuffer)> = ids.iter().map(String::as_str).zip(refs).collect();
    let types: Vec<u8> = (1..=TYPE_COUNT).collect();
    build_degradation_matrix_for(&named, &types, seed)
}
