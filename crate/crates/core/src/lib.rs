//! Gram-matrix MMD (GMMD): a distributional realism metric comparing an
//! evaluation image set with an anchor set of real images through the
//! texture statistics of a backbone layer.
//!
//! Pipeline: [`backbone::FeatureProvider`] activations → [`gram`] vectors →
//! [`gram::Standardizer`] fitted on the anchor → [`mmd`] with an RBF or
//! cubic kernel. [`degrade`] and [`protocol`] implement the severity-sweep
//! meta-evaluation; [`experiments`] holds grouped-rank and inversion runs.

pub mod anchor;
pub mod backbone;
pub mod degrade;
pub mod error;
pub mod experiments;
pub mod gram;
pub mod image;
pub mod kernel;
pub mod mmd;
pub mod protocol;
pub mod rank;
pub mod seed;
pub mod sum;
pub mod synthetic;

pub use anchor::{build_anchor_model, AnchorModel, AnchorOptions, Provenance};
pub use backbone::{FeatureProvider, Family, PixelPatch, Preprocessing};
pub use error::{Error, Result};
pub use gram::{ActivationTensor, GramMatrix, GramVector, Standardizer};
pub use image::{ImageBuffer, NamedImage};
pub use kernel::{KernelKind, KernelSpec};
pub use mmd::{mmd2_biased, mmd2_unbiased, MmdResult, PairwiseTable, Reduction};
pub use protocol::{AnchorMode, GammaPolicy, MetaResult, MetricConfig};

/// Crate version, embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
