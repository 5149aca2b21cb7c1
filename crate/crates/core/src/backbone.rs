//! Feature sources and the image preprocessing applied before them.

use image::imageops::FilterType;
use image::{ImageBuffer as RgbImage, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::ActivationTensor;
use crate::image::ImageBuffer;
use crate::seed::sha256_hex;

/// Which Gram constructor a backbone's activations feed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[serde(alias = "CNN")]
    Cnn,
    #[serde(alias = "Tokens")]
    Tokens,
}

/// A pretrained (or built-in) network exposing numbered intermediate layers.
///
/// Layers are numbered from 1. Implementations must be deterministic.
pub trait FeatureProvider: Send + Sync {
    fn backbone_id(&self) -> &str;

    fn layer_count(&self) -> usize;

    fn family(&self) -> Family;

    /// Digest of everything that changes the network input for a given image.
    fn preprocessing_hash(&self) -> String;

    /// Activations of several layers from a single forward pass, in the
    /// order requested.
    fn extract_layers(&self, image: &ImageBuffer, layers: &[usize]) -> Result<Vec<ActivationTensor>>;

    fn extract(&self, layer: usize, image: &ImageBuffer) -> Result<ActivationTensor> {
        let mut out = self.extract_layers(image, &[layer])?;
        out.pop()
            .ok_or_else(|| Error::invalid("feature provider returned no activations"))
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if (1..=self.layer_count()).contains(&layer) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "layer {layer} outside 1..={} for backbone {}",
                self.layer_count(),
                self.backbone_id()
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ResizePolicy {
    #[default]
    None,
    /// Stretch to exactly `width × height`.
    Exact { width: u32, height: u32 },
    /// Scale the short side to `size`, then centre-crop `crop × crop`.
    ShortSideCrop { size: u32, crop: u32 },
    /// Round each side down to a multiple of `multiple` (at least one multiple).
    MultipleOf { multiple: u32 },
}

/// Resize and per-channel normalization `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    #[serde(default)]
    pub resize: ResizePolicy,
    #[serde(default = "zero3")]
    pub mean: [f32; 3],
    #[serde(default = "one3")]
    pub std: [f32; 3],
}

fn zero3() -> [f32; 3] {
    [0.0; 3]
}

fn one3() -> [f32; 3] {
    [1.0; 3]
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            resize: ResizePolicy::None,
            mean: zero3(),
            std: one3(),
        }
    }
}

/// Planar `1 × 3 × H × W` network input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl InputTensor {
    pub fn shape(&self) -> [usize; 4] {
        [1, 3, self.height, self.width]
    }
}

impl Preprocessing {
    /// VAE-style: sides to a multiple of 64, intensities to `[-1, 1]`.
    pub fn vae() -> Self {
        Self {
            resize: ResizePolicy::MultipleOf { multiple: 64 },
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }

    /// No resize, intensities to `[-1, 1]`.
    pub fn centered() -> Self {
        Self {
            resize: ResizePolicy::None,
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("normalization std must be positive and finite"));
        }
        let zero = match self.resize {
            ResizePolicy::None => false,
            ResizePolicy::Exact { width, height } => width == 0 || height == 0,
            ResizePolicy::ShortSideCrop { size, crop } => size == 0 || crop == 0 || crop > size,
            ResizePolicy::MultipleOf { multiple } => multiple == 0,
        };
        if zero {
            return Err(Error::invalid(format!("invalid resize policy {:?}", self.resize)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plain data serializes");
        sha256_hex(json.as_bytes())
    }

    pub fn apply(&self, img: &ImageBuffer) -> Result<InputTensor> {
        self.validate()?;
        let resized = self.resize_image(img)?;
        let (w, h) = (resized.width(), resized.height());
        let mut data = vec![0.0f32; 3 * w * h];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data[(c * h + y) * w + x] = (resized.get(x, y, c) - self.mean[c]) / self.std[c];
                }
            }
        }
        Ok(InputTensor {
            height: h,
            width: w,
            data,
        })
    }

    fn resize_image(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        let (w, h) = (img.width() as u32, img.height() as u32);
        match self.resize {
            ResizePolicy::None => Ok(img.clone()),
            ResizePolicy::Exact { width, height } => resize(img, width, height),
            ResizePolicy::MultipleOf { multiple } => {
                let round = |v: u32| (v / multiple).max(1) * multiple;
                resize(img, round(w), round(h))
            }
            ResizePolicy::ShortSideCrop { size, crop } => {
                let short = w.min(h) as f64;
                let scale = f64::from(size) / short;
                let nw = ((f64::from(w) * scale).round() as u32).max(crop);
                let nh = ((f64::from(h) * scale).round() as u32).max(crop);
                let scaled = resize(img, nw, nh)?;
                let (x0, y0) = ((nw - crop) / 2, (nh - crop) / 2);
                let c = crop as usize;
                let mut data = Vec::with_capacity(c * c * 3);
                for y in 0..c {
                    for x in 0..c {
                        for ch in 0..3 {
                            data.push(scaled.get(x0 as usize + x, y0 as usize + y, ch));
                        }
                    }
                }
                ImageBuffer::new(c, c, data)
            }
        }
    }
}

/// Triangle-filter resample; identity when the size already matches.
pub fn resize(img: &ImageBuffer, width: u32, height: u32) -> Result<ImageBuffer> {
    if width as usize == img.width() && height as usize == img.height() {
        return Ok(img.clone());
    }
    let src: RgbImage<Rgb<f32>, Vec<f32>> =
        RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
            .ok_or_else(|| Error::invalid("image buffer size"))?;
    let out = image::imageops::resize(&src, width, height, FilterType::Triangle);
    ImageBuffer::new(width as usize, height as usize, out.into_raw())
}

/// Built-in feature source needing no model file: layer `l` average-pools
/// RGB over `8·2^(l−1)`-pixel square blocks (partial blocks at the right and
/// bottom edges are averaged over the pixels they contain). The result is a
/// CNN tensor with three channels. Inputs are mapped to `[-1, 1]` first
/// unless another [`Preprocessing`] is supplied.
#[derive(Debug, Clone)]
pub struct PixelPatch {
    id: String,
    layers: usize,
    preprocessing: Preprocessing,
}

pub const PIXEL_PATCH_ID: &str = "pixel-patch";
pub const PIXEL_PATCH_LAYERS: usize = 3;

impl Default for PixelPatch {
    fn default() -> Self {
        Self {
            id: PIXEL_PATCH_ID.to_string(),
            layers: PIXEL_PATCH_LAYERS,
            preprocessing: Preprocessing::centered(),
        }
    }
}

impl PixelPatch {
    /// Same operator under another name and layer count; used for fixture
    /// grids that mimic multi-layer backbones.
    pub fn named(id: impl Into<String>, layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::invalid("backbone needs at least one layer"));
        }
        Ok(Self {
            id: id.into(),
            layers,
            preprocessing: Preprocessing::centered(),
        })
    }

    pub fn with_preprocessing(mut self, preprocessing: Preprocessing) -> Result<Self> {
        preprocessing.validate()?;
        self.preprocessing = preprocessing;
        Ok(self)
    }

    pub fn pool_size(layer: usize) -> usize {
        8usize << (layer.saturating_sub(1)).min(24)
    }

    fn pool(input: &InputTensor, p: usize) -> ActivationTensor {
        let (w, h) = (input.width, input.height);
        let (bw, bh) = (w.div_ceil(p), h.div_ceil(p));
        let mut sums = vec![0.0f64; 3 * bw * bh];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    sums[c * bw * bh + (y / p) * bw + x / p] += f64::from(input.data[(c * h + y) * w + x]);
                }
            }
        }
        for by in 0..bh {
            for bx in 0..bw {
                let n = ((p.min(w - bx * p)) * (p.min(h - by * p))) as f64;
                for c in 0..3 {
                    sums[c * bw * bh + by * bw + bx] /= n;
                }
            }
        }
        ActivationTensor::cnn(3, bh, bw, sums).expect("pooled tensor is well formed")
    }
}

impl FeatureProvider for PixelPatch {
    fn backbone_id(&self) -> &str {
        &self.id
    }

    fn layer_count(&self) -> usize {
        self.layers
    }

    fn family(&self) -> Family {
        Family::Cnn
    }

    fn preprocessing_hash(&self) -> String {
        self.preprocessing.hash()
    }

    fn extract_layers(&self, image: &ImageBuffer, layers: &[usize]) -> Result<Vec<ActivationTensor>> {
        for &l in layers {
            self.check_layer(l)?;
        }
        let input = self.preprocessing.apply(image)?;
        Ok(layers.iter().map(|&l| Self::pool(&input, Self::pool_size(l))).collect())
    }
}
