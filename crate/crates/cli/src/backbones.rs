//! Naming backbones in run specs and on the command line.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use gmmd_core::backbone::{PIXEL_PATCH_ID, PIXEL_PATCH_LAYERS};
use gmmd_core::{FeatureProvider, PixelPatch};
use gmmd_io::OnnxBackbone;
use serde::{Deserialize, Serialize};

use crate::error::usage;

/// `pixel-patch`, `toy:<id>:<layers>` (the pixel-patch operator under
/// another name) or a sidecar path. JSON also takes `{"sidecar": path}` and
/// `{"toy": id, "layers": n}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum BackboneRef {
    Name(String),
    Toy { toy: String, layers: usize },
    Sidecar { sidecar: PathBuf },
}

impl<'de> Deserialize<'de> for BackboneRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged, deny_unknown_fields)]
        enum Raw {
            Text(String),
            Toy { toy: String, layers: usize },
            Sidecar { sidecar: PathBuf },
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom)?,
            Raw::Toy { toy, layers } => BackboneRef::Toy { toy, layers },
            Raw::Sidecar { sidecar } => BackboneRef::Sidecar { sidecar },
        })
    }
}

impl FromStr for BackboneRef {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("toy:") {
            let (id, layers) = rest
                .rsplit_once(':')
                .ok_or_else(|| usage(format!("expected toy:<id>:<layers>, got {s}")))?;
            let layers = layers
                .parse()
                .map_err(|_| usage(format!("bad layer count in {s}")))?;
            return Ok(BackboneRef::Toy {
                toy: id.to_string(),
                layers,
            });
        }
        if s.is_empty() {
            return Err(usage("empty backbone name"));
        }
        Ok(BackboneRef::Name(s.to_string()))
    }
}

impl BackboneRef {
    fn sidecar_path(&self) -> Option<&Path> {
        match self {
            BackboneRef::Name(n) if n != PIXEL_PATCH_ID => Some(Path::new(n)),
            BackboneRef::Sidecar { sidecar } => Some(sidecar),
            _ => None,
        }
    }

    pub fn rebase(&mut self, base: &Path) {
        if let Some(p) = self.sidecar_path() {
            if p.is_relative() {
                *self = BackboneRef::Sidecar {
                    sidecar: base.join(p),
                };
            }
        }
    }

    /// Stable text stored in anchor provenance, parsed back by
    /// [`BackboneRef::from_source`].
    pub fn source(&self) -> String {
        match self {
            BackboneRef::Toy { toy, layers } => format!("builtin:{toy}:{layers}"),
            BackboneRef::Name(n) if n == PIXEL_PATCH_ID => format!("builtin:{PIXEL_PATCH_ID}:{PIXEL_PATCH_LAYERS}"),
            other => other.sidecar_path().expect("sidecar").display().to_string(),
        }
    }

    pub fn from_source(s: &str) -> Result<Self> {
        match s.strip_prefix("builtin:") {
            Some(rest) if rest == format!("{PIXEL_PATCH_ID}:{PIXEL_PATCH_LAYERS}") => {
                Ok(BackboneRef::Name(PIXEL_PATCH_ID.into()))
            }
            Some(rest) => format!("toy:{rest}").parse(),
            None => Ok(BackboneRef::Sidecar { sidecar: s.into() }),
        }
    }

    pub fn open(&self) -> Result<Box<dyn FeatureProvider>> {
        match self {
            BackboneRef::Toy { toy, layers } => Ok(Box::new(PixelPatch::named(toy.clone(), *layers)?)),
            BackboneRef::Name(n) if n == PIXEL_PATCH_ID => Ok(Box::new(PixelPatch::default())),
            other => {
                let p = other.sidecar_path().expect("sidecar");
                let net = OnnxBackbone::from_sidecar(p)
                    .with_context(|| format!("loading backbone {}", p.display()))?;
                Ok(Box::new(net))
            }
        }
    }
}

/// Opens a backbone and checks that `layer` exists.
pub fn open_layer(b: &BackboneRef, layer: usize) -> Result<Box<dyn FeatureProvider>> {
    let p = b.open()?;
    p.check_layer(layer)?;
    Ok(p)
}
