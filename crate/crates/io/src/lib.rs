//! File formats, caches and ONNX backbones for the gmmd toolkit.

pub mod anchor_file;
pub mod cache;
pub mod error;
pub mod images;
pub mod manifests;
pub mod npy;
pub mod onnx;

pub use anchor_file::{load_anchor, save_anchor};
pub use cache::{CacheKey, GramCache, VectorSet};
pub use error::{read as read_file, IoError, Result};
pub use images::{decode_image, list_images, load_image, load_image_dir, save_png};
pub use onnx::{load_backbone_spec, BackboneSpec, OnnxBackbone};
