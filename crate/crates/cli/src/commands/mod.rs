//! Subcommand implementations and the plumbing they share.

pub mod anchor;
pub mod degrade;
pub mod experiments;
pub mod meta;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gmmd_core::anchor::gram_vectors;
use gmmd_core::{FeatureProvider, GramVector, NamedImage};
use gmmd_io::cache::CACHE_ENV;
use gmmd_io::GramCache;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::usage;
use crate::output::Artifacts;
use crate::spec::RunSpec;

pub struct Ctx {
    pub dry_run: bool,
}

/// Prints the resolved plan and reports whether to stop there.
pub fn dry_run(ctx: &Ctx, out: &Artifacts, spec: &RunSpec, steps: &[String]) -> Result<bool> {
    if !ctx.dry_run {
        return Ok(false);
    }
    #[derive(Serialize)]
    struct Plan<'a> {
        spec_hash: &'a str,
        spec: &'a RunSpec,
        steps: &'a [String],
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&Plan {
            spec_hash: out.spec_hash(),
            spec,
            steps,
        })?
    );
    Ok(true)
}

pub fn require_dir(p: &Path, what: &str) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} is not a directory", p.display())))
    }
}

pub fn load_images(dir: &Path, what: &str) -> Result<Vec<NamedImage>> {
    require_dir(dir, what)?;
    let images = gmmd_io::load_image_dir(dir).with_context(|| format!("loading {what}"))?;
    if images.is_empty() {
        return Err(usage(format!("{what} {} contains no PNG or JPEG images", dir.display())));
    }
    Ok(images)
}

/// `--cache`, else `GMMD_CACHE_DIR`, else `<out>/cache`.
pub fn cache_for(spec: &RunSpec) -> GramCache {
    match &spec.cache {
        Some(root) => GramCache::new(root.clone()),
        None => GramCache::from_env(spec.out_dir().join("cache")),
    }
}

pub fn describe_cache(spec: &RunSpec) -> String {
    let c = cache_for(spec);
    let from = if spec.cache.is_some() {
        "--cache"
    } else if std::env::var_os(CACHE_ENV).is_some() {
        CACHE_ENV
    } else {
        "default"
    };
    format!("gram cache at {} ({from})", c.root().display())
}

/// Cache id of an image file: its id plus a digest of its bytes, so files
/// that share a name in different folders never share an entry.
pub fn content_id(id: &str, bytes: &[u8]) -> String {
    format!("{id}@{}", &gmmd_core::seed::sha256_hex(bytes)[..16])
}

/// Gram vectors for `(id, path)` pairs, served from the cache where
/// possible; freshly computed vectors are stored back.
pub fn cached_vectors(
    provider: &dyn FeatureProvider,
    layer: usize,
    items: &[(String, PathBuf)],
    cache: &GramCache,
) -> Result<Vec<GramVector>> {
    let hash = provider.preprocessing_hash();
    let files: Vec<(String, Vec<u8>)> = items
        .par_iter()
        .map(|(id, path)| {
            let bytes = gmmd_io::read_file(path)?;
            Ok((content_id(id, &bytes), bytes))
        })
        .collect::<Result<_>>()?;
    let keys: Vec<&str> = files.iter().map(|(k, _)| k.as_str()).collect();
    let mut found = cache.get_many(provider.backbone_id(), layer, &hash, &keys)?;
    let missing: Vec<usize> = (0..items.len()).filter(|&i| found[i].is_none()).collect();
    if !missing.is_empty() {
        log::info!(
            "{}/{layer}: computing {} of {} Gram vectors",
            provider.backbone_id(),
            missing.len(),
            items.len()
        );
        let images: Vec<NamedImage> = missing
            .par_iter()
            .map(|&i| {
                let image = gmmd_io::decode_image(&files[i].1, &items[i].1)?;
                Ok(NamedImage::new(items[i].0.clone(), image))
            })
            .collect::<Result<_>>()?;
        let named = gmmd_core::anchor::named_refs(&images);
        let fresh = gram_vectors(provider, layer, &named)?;
        let pairs: Vec<(String, GramVector)> = missing
            .iter()
            .map(|&i| files[i].0.clone())
            .zip(fresh.iter().cloned())
            .collect();
        cache.put_many(provider.backbone_id(), layer, &hash, &pairs)?;
        for (&i, v) in missing.iter().zip(fresh) {
            found[i] = Some(v);
        }
    }
    Ok(found.into_iter().map(|v| v.expect("filled above")).collect())
}

/// `(id, path)` for every image in `dir`; ids are file stems.
pub fn image_items(dir: &Path, what: &str) -> Result<Vec<(String, PathBuf)>> {
    require_dir(dir, what)?;
    let paths = gmmd_io::list_images(dir)?;
    if paths.is_empty() {
        return Err(usage(format!("{what} {} contains no PNG or JPEG images", dir.display())));
    }
    Ok(paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (id, p)
        })
        .collect())
}
