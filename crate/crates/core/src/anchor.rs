//! Anchor models: the fitted reference distribution every score is taken
//! against.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::FeatureProvider;
use crate::error::{Error, Result};
use crate::gram::{fit_standardizer, gram_vector, GramVector, Standardizer};
use crate::image::{ImageBuffer, NamedImage};
use crate::kernel::{median_heuristic_gamma, KernelKind, DEFAULT_MAX_EXACT_PAIRS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub image_ids: Vec<String>,
    /// Seed of the median-heuristic pair subsample.
    pub seed: u64,
    pub preprocessing_hash: String,
    /// Model file path or built-in backbone name.
    pub backbone_source: String,
    pub kernel: KernelKind,
    pub max_exact_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorModel {
    pub backbone_id: String,
    pub layer_index: usize,
    pub standardizer: Standardizer,
    /// Median heuristic of `anchor_vectors`.
    pub gamma_med: f64,
    /// Standardized anchor Gram vectors, one row per image.
    pub anchor_vectors: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorOptions {
    pub kernel: KernelKind,
    pub epsilon_floor: f64,
    pub seed: u64,
    pub max_exact_pairs: usize,
}

impl Default for AnchorOptions {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Rbf,
            epsilon_floor: crate::gram::DEFAULT_EPSILON_FLOOR,
            seed: 0,
            max_exact_pairs: DEFAULT_MAX_EXACT_PAIRS,
        }
    }
}

impl AnchorModel {
    /// Fits the standardizer on `vectors`, standardizes them and takes the
    /// median heuristic on the result.
    pub fn fit(
        backbone_id: &str,
        layer_index: usize,
        vectors: &[GramVector],
        image_ids: Vec<String>,
        preprocessing_hash: &str,
        backbone_source: &str,
        options: &AnchorOptions,
    ) -> Result<Self> {
        Error::check_dim(vectors.len(), image_ids.len())?;
        let standardizer = fit_standardizer(vectors, options.epsilon_floor)?;
        let anchor_vectors = standardizer.apply_all(vectors)?;
        let gamma_med = median_heuristic_gamma(&anchor_vectors, options.max_exact_pairs, options.seed)?;
        Ok(Self {
            backbone_id: backbone_id.to_string(),
            layer_index,
            standardizer,
            gamma_med,
            anchor_vectors,
            provenance: Provenance {
                image_ids,
                seed: options.seed,
                preprocessing_hash: preprocessing_hash.to_string(),
                backbone_source: backbone_source.to_string(),
                kernel: options.kernel,
                max_exact_pairs: options.max_exact_pairs,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn len(&self) -> usize {
        self.anchor_vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_vectors.is_empty()
    }

    pub fn standardize(&self, vectors: &[GramVector]) -> Result<Vec<Vec<f64>>> {
        self.standardizer.apply_all(vectors)
    }

    /// Median heuristic recomputed from the stored vectors.
    pub fn recompute_gamma_med(&self) -> Result<f64> {
        median_heuristic_gamma(
            &self.anchor_vectors,
            self.provenance.max_exact_pairs,
            self.provenance.seed,
        )
    }
}

fn as_inference(e: Error, layer: usize, image: &str) -> Error {
    match e {
        Error::Inference { .. } => e,
        other => Error::Inference {
            layer,
            image: image.to_string(),
            message: other.to_string(),
        },
    }
}

/// Gram vectors of `layers` for each image, computed with one forward pass
/// per image. Result is indexed `[layer position][image]`.
pub fn gram_vectors_multi(
    provider: &dyn FeatureProvider,
    layers: &[usize],
    images: &[(&str, &ImageBuffer)],
) -> Result<Vec<Vec<GramVector>>> {
    for &l in layers {
        provider.check_layer(l)?;
    }
    let per_image: Vec<Vec<GramVector>> = images
        .par_iter()
        .map(|(id, img)| {
            let first = layers.first().copied().unwrap_or(0);
            let acts = provider
                .extract_layers(img, layers)
                .map_err(|e| as_inference(e, first, id))?;
            Error::check_dim(layers.len(), acts.len())?;
            acts.iter()
                .zip(layers)
                .map(|(a, &l)| gram_vector(a).map_err(|e| as_inference(e, l, id)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Vec<GramVector>> = vec![Vec::with_capacity(images.len()); layers.len()];
    for row in per_image {
        for (slot, v) in out.iter_mut().zip(row) {
            slot.push(v);
        }
    }
    Ok(out)
}

pub fn gram_vectors(
    provider: &dyn FeatureProvider,
    layer: usize,
    images: &[(&str, &ImageBuffer)],
) -> Result<Vec<GramVector>> {
    Ok(gram_vectors_multi(provider, &[layer], images)?.remove(0))
}

pub fn named_refs(images: &[NamedImage]) -> Vec<(&str, &ImageBuffer)> {
    images.iter().map(|n| (n.id.as_str(), &n.image)).collect()
}

/// Extract, Gram, fit, standardize and take the median heuristic.
pub fn build_anchor_model(
    provider: &dyn FeatureProvider,
    backbone_source: &str,
    layer: usize,
    images: &[NamedImage],
    options: &AnchorOptions,
) -> Result<AnchorModel> {
    if images.len() < 2 {
        return Err(Error::InsufficientSamples {
            what: "anchor model",
            needed: 2,
            found: images.len(),
        });
    }
    let vectors = gram_vectors(provider, layer, &named_refs(images))?;
    AnchorModel::fit(
        provider.backbone_id(),
        layer,
        &vectors,
        images.iter().map(|n| n.id.clone()).collect(),
        &provider.preprocessing_hash(),
        backbone_source,
        options,
    )
}
