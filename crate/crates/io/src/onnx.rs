//! Pretrained backbones exported to ONNX, run with tract.
//!
//! A backbone is described by a JSON sidecar next to its `.onnx` file:
//!
//! ```json
//! {
//!   "backbone_id": "vgg19",
//!   "family": "cnn",
//!   "model_file": "vgg19.onnx",
//!   "layer_outputs": {"1": "relu1_1", "2": "relu2_1"},
//!   "preprocessing": {"resize": {"mode": "none"}, "mean": [0.485, 0.456, 0.406], "std": [0.229, 0.224, 0.225]},
//!   "tokens": null
//! }
//! ```
//!
//! Token backbones set `"tokens": {"prefix_tokens": 1, "patch_size": 16}`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use gmmd_core::backbone::{FeatureProvider, Family, Preprocessing};
use gmmd_core::{ActivationTensor, Error, ImageBuffer};
use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use crate::error::{read_string, IoError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TokenLayout {
    /// Leading non-patch tokens (class, registers) to drop. When absent it is
    /// inferred from the patch grid.
    #[serde(default)]
    pub prefix_tokens: Option<usize>,
    #[serde(default)]
    pub patch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub backbone_id: String,
    pub family: Family,
    /// Relative paths are resolved against the sidecar's folder.
    pub model_file: PathBuf,
    /// Layer number (from 1, contiguous) to graph output or node name.
    pub layer_outputs: BTreeMap<usize, String>,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    #[serde(default)]
    pub tokens: Option<TokenLayout>,
}

impl BackboneSpec {
    pub fn validate(&self) -> gmmd_core::Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.backbone_id.is_empty() {
            return bad("backbone_id is empty".into());
        }
        if self.layer_outputs.is_empty() {
            return bad(format!("backbone {} lists no layers", self.backbone_id));
        }
        for (i, (&layer, name)) in self.layer_outputs.iter().enumerate() {
            if layer != i + 1 {
                return bad(format!(
                    "backbone {}: layers must be numbered 1..=L without gaps, found {layer}",
                    self.backbone_id
                ));
            }
            if name.is_empty() {
                return bad(format!("backbone {}: layer {layer} has no output name", self.backbone_id));
            }
        }
        if self.family == Family::Cnn && self.tokens.is_some() {
            return bad(format!("backbone {}: token layout on a cnn backbone", self.backbone_id));
        }
        if let Some(TokenLayout { patch_size: Some(0), .. }) = self.tokens {
            return bad(format!("backbone {}: patch_size must be positive", self.backbone_id));
        }
        self.preprocessing.validate()
    }
}

/// Reads and validates a sidecar, resolving `model_file`.
pub fn load_backbone_spec(path: &Path) -> Result<BackboneSpec> {
    let mut spec: BackboneSpec =
        serde_json::from_str(&read_string(path)?).map_err(|e| IoError::format(path, e))?;
    spec.validate().map_err(|e| IoError::format(path, e))?;
    if spec.model_file.is_relative() {
        let base = path.parent().unwrap_or(Path::new("."));
        spec.model_file = base.join(&spec.model_file);
    }
    Ok(spec)
}

type Plan = Arc<TypedRunnableModel>;

/// An ONNX network behind [`FeatureProvider`]. Optimized plans are built
/// lazily per input size and layer selection, then reused.
pub struct OnnxBackbone {
    spec: BackboneSpec,
    model: InferenceModel,
    plans: Mutex<HashMap<(usize, usize, Vec<usize>), Plan>>,
}

impl std::fmt::Debug for OnnxBackbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxBackbone").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl OnnxBackbone {
    pub fn open(spec: BackboneSpec) -> Result<Self> {
        let path = spec.model_file.clone();
        spec.validate().map_err(|e| IoError::format(&path, e))?;
        let bytes = crate::error::read(&path)?;
        let model = tract_onnx::onnx()
            .model_for_read(&mut bytes.as_slice())
            .map_err(|e| IoError::format(&path, format!("cannot parse ONNX model: {e:#}")))?;
        // Fail early on misspelt output names rather than on the first image.
        for name in spec.layer_outputs.values() {
            model
                .clone()
                .with_outputs_by_name([name])
                .map_err(|_| IoError::format(&path, format!("model has no output or node named {name:?}")))?;
        }
        Ok(Self {
            spec,
            model,
            plans: Mutex::new(HashMap::new()),
        })
    }

    /// `open(load_backbone_spec(sidecar))`.
    pub fn from_sidecar(sidecar: &Path) -> Result<Self> {
        Self::open(load_backbone_spec(sidecar)?)
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn plan(&self, height: usize, width: usize, layers: &[usize]) -> gmmd_core::Result<Plan> {
        let key = (height, width, layers.to_vec());
        let mut plans = self.plans.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(p) = plans.get(&key) {
            return Ok(p.clone());
        }
        let names: Vec<&str> = layers.iter().map(|l| self.spec.layer_outputs[l].as_str()).collect();
        let plan = self
            .model
            .clone()
            .with_input_fact(0, f32::fact([1, 3, height, width]).into())
            .and_then(|m| m.with_outputs_by_name(names))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| Error::InvalidInput(format!("cannot prepare {}: {e:#}", self.spec.backbone_id)))?;
        plans.insert(key, plan.clone());
        Ok(plan)
    }

    fn to_activation(&self, out: &Tensor, input_hw: (usize, usize)) -> gmmd_core::Result<ActivationTensor> {
        let bad = |m: String| Error::InvalidInput(m);
        let cast = out
            .cast_to::<f64>()
            .map_err(|e| bad(format!("non-numeric activation: {e}")))?;
        let values = cast
            .to_plain_array_view::<f64>()
            .map_err(|e| bad(format!("unreadable activation: {e}")))?
            .iter()
            .copied()
            .collect::<Vec<f64>>();
        let shape = match out.shape() {
            [1, rest @ ..] => rest,
            s => return Err(bad(format!("expected batch size 1, got shape {s:?}"))),
        };
        match (self.spec.family, shape) {
            (Family::Cnn, &[c, h, w]) => ActivationTensor::cnn(c, h, w, values),
            (Family::Tokens, &[n, d]) => {
                let layout = self.spec.tokens.clone().unwrap_or_default();
                let grid = layout
                    .patch_size
                    .map(|p| (input_hw.0 / p) * (input_hw.1 / p));
                let prefix = match (layout.prefix_tokens, grid) {
                    (Some(k), _) => k,
                    (None, Some(g)) if g <= n => n - g,
                    (None, Some(g)) => return Err(bad(format!("{n} tokens but a {g}-patch grid"))),
                    (None, None) => 0,
                };
                if prefix >= n {
                    return Err(bad(format!("{n} tokens leave no patches after {prefix} prefix tokens")));
                }
                if let Some(g) = grid {
                    if n - prefix != g {
                        return Err(bad(format!(
                            "{} patch tokens but the input implies a grid of {g}",
                            n - prefix
                        )));
                    }
                }
                ActivationTensor::tokens(n - prefix, d, values[prefix * d..].to_vec())
            }
            (family, s) => Err(bad(format!("activation shape {s:?} does not fit the {family:?} family"))),
        }
    }
}

impl FeatureProvider for OnnxBackbone {
    fn backbone_id(&self) -> &str {
        &self.spec.backbone_id
    }

    fn layer_count(&self) -> usize {
        self.spec.layer_outputs.len()
    }

    fn family(&self) -> Family {
        self.spec.family
    }

    fn preprocessing_hash(&self) -> String {
        self.spec.preprocessing.hash()
    }

    fn extract_layers(&self, image: &ImageBuffer, layers: &[usize]) -> gmmd_core::Result<Vec<ActivationTensor>> {
        for &l in layers {
            self.check_layer(l)?;
        }
        let input = self.spec.preprocessing.apply(image)?;
        let (h, w) = (input.height, input.width);
        let plan = self.plan(h, w, layers)?;
        let tensor = Tensor::from_shape(&input.shape(), &input.data)
            .map_err(|e| Error::InvalidInput(format!("input tensor: {e}")))?;
        let outputs = plan
            .run(tvec!(tensor.into()))
            .map_err(|e| Error::InvalidInput(format!("forward pass: {e:#}")))?;
        outputs.iter().map(|o| self.to_activation(o, (h, w))).collect()
    }
}
