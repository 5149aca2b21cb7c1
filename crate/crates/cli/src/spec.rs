//! Run specs: the JSON document every subcommand is driven by.
//!
//! Flags override fields of the file given with `--spec`. The resolved
//! document, together with the subcommand name, is hashed into the
//! `spec-hash` that every output carries.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gmmd_core::kernel::KernelKind;
use gmmd_core::protocol::{AnchorMode, GammaPolicy};
use serde::{Deserialize, Serialize};

use crate::backbones::BackboneRef;
use crate::error::usage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    /// Clean reference images (degradation protocol).
    pub refs: Option<PathBuf>,
    /// Separate clean images for the independent anchor mode, or the images
    /// an anchor model is fitted on.
    #[serde(alias = "anchorImages")]
    pub anchor_images: Option<PathBuf>,
    /// A fitted `anchor.gmmd`.
    pub anchor: Option<PathBuf>,
    /// Evaluation images, or a vector directory.
    pub eval: Option<PathBuf>,
    /// Image folder for manifest-driven experiments.
    pub images: Option<PathBuf>,
    /// `kadid.csv`, `raise.csv` or `inversion.json`.
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Gram-vector cache root; `GMMD_CACHE_DIR` when unset.
    pub cache: Option<PathBuf>,

    pub backbone: Option<BackboneRef>,
    pub backbones: Vec<BackboneRef>,
    #[serde(alias = "layerIndex")]
    pub layer: Option<usize>,
    pub layers: Vec<usize>,

    pub kernel: Option<KernelKind>,
    /// Multiples of the median-heuristic bandwidth.
    #[serde(alias = "gammaFactors")]
    pub gamma_factors: Vec<f64>,
    /// Absolute RBF bandwidth; overrides `gamma_factors`.
    pub gamma: Option<f64>,
    #[serde(alias = "anchorMode")]
    pub anchor_mode: Option<AnchorMode>,
    /// Degradation types (1..=20); all when empty.
    pub types: Vec<u8>,
    pub seed: Option<u64>,
    #[serde(alias = "epsilonFloor")]
    pub epsilon_floor: Option<f64>,
    #[serde(alias = "maxExactPairs")]
    pub max_exact_pairs: Option<usize>,

    #[serde(alias = "groupSize")]
    pub group_size: Option<usize>,
    /// Put the highest opinion scores in group 0.
    #[serde(alias = "invertOrder")]
    pub invert_order: Option<bool>,
    pub permutations: Option<usize>,
    /// RAISE `source` values to keep; every non-`real` source when empty.
    pub sources: Vec<String>,
    #[serde(alias = "includeReal")]
    pub include_real: Option<bool>,

    /// Raw embedding NPY files for the CLIP-style baseline.
    #[serde(alias = "anchorEmbeddings")]
    pub anchor_embeddings: Option<PathBuf>,
    #[serde(alias = "evalEmbeddings")]
    pub eval_embeddings: Option<PathBuf>,

    /// `meta_results.csv` to summarize.
    pub results: Option<PathBuf>,
    #[serde(alias = "topK")]
    pub top_k: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($opt:ident),* ; $($vec:ident),*) => {
        $( if $src.$opt.is_some() { $dst.$opt = $src.$opt.clone(); } )*
        $( if !$src.$vec.is_empty() { $dst.$vec = $src.$vec.clone(); } )*
    };
}

impl RunSpec {
    /// Parses a spec file; relative paths are taken from the file's folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read run spec {}: {e}", path.display())))?;
        let mut spec: RunSpec =
            serde_json::from_str(&text).with_context(|| format!("invalid run spec {}", path.display()))?;
        spec.rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(spec)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        for p in [
            &mut self.refs,
            &mut self.anchor_images,
            &mut self.anchor,
            &mut self.eval,
            &mut self.images,
            &mut self.manifest,
            &mut self.out,
            &mut self.cache,
            &mut self.anchor_embeddings,
            &mut self.eval_embeddings,
            &mut self.results,
        ] {
            fix(p);
        }
        if let Some(b) = &mut self.backbone {
            b.rebase(base);
        }
        for b in &mut self.backbones {
            b.rebase(base);
        }
    }

    /// Fields set in `flags` replace those in `self`.
    pub fn overlay(&mut self, flags: &RunSpec) {
        overlay!(self, flags;
            refs, anchor_images, anchor, eval, images, manifest, out, cache, backbone, layer,
            kernel, gamma, anchor_mode, seed, epsilon_floor, max_exact_pairs, group_size,
            invert_order, permutations, include_real, anchor_embeddings, eval_embeddings,
            results, top_k;
            backbones, layers, gamma_factors, types, sources);
    }

    /// Digest of the resolved spec for `command`. Where outputs and the
    /// cache live does not change results, so `out` and `cache` are left out.
    pub fn hash(&self, command: &str) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            command: &'a str,
            spec: &'a RunSpec,
        }
        let spec = RunSpec {
            out: None,
            cache: None,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&Keyed { command, spec: &spec }).expect("spec serializes");
        gmmd_core::seed::sha256_hex(&bytes)
    }

    pub fn require<'a, T>(field: &'a Option<T>, name: &str) -> Result<&'a T> {
        field
            .as_ref()
            .ok_or_else(|| usage(format!("missing required setting `{name}` (flag or run-spec field)")))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel.unwrap_or(KernelKind::Rbf)
    }

    pub fn epsilon_floor(&self) -> f64 {
        self.epsilon_floor.unwrap_or(gmmd_core::gram::DEFAULT_EPSILON_FLOOR)
    }

    pub fn max_exact_pairs(&self) -> usize {
        self.max_exact_pairs.unwrap_or(gmmd_core::kernel::DEFAULT_MAX_EXACT_PAIRS)
    }

    pub fn types(&self) -> Result<Vec<u8>> {
        let count = gmmd_core::degrade::TYPE_COUNT;
        if self.types.is_empty() {
            return Ok((1..=count).collect());
        }
        let mut t = self.types.clone();
        t.sort_unstable();
        t.dedup();
        if let Some(bad) = t.iter().find(|&&x| x == 0 || x > count) {
            return Err(usage(format!("degradation type {bad} outside 1..={count}")));
        }
        Ok(t)
    }

    /// Bandwidth policies: the absolute `gamma` if set, else one per factor
    /// (`default_factors` when none are given).
    pub fn gamma_policies(&self, default_factors: &[f64]) -> Result<Vec<GammaPolicy>> {
        if let Some(gamma) = self.gamma {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(usage(format!("gamma must be positive and finite, got {gamma}")));
            }
            return Ok(vec![GammaPolicy::Absolute { gamma }]);
        }
        let factors = if self.gamma_factors.is_empty() {
            default_factors
        } else {
            &self.gamma_factors
        };
        if let Some(f) = factors.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return Err(usage(format!("gamma factor must be positive and finite, got {f}")));
        }
        Ok(factors
            .iter()
            .map(|&factor| GammaPolicy::MedianMultiple { factor })
            .collect())
    }
}
