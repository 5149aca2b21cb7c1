//! `anchor`, `features` and `score`.

use std::path::Path;

use anyhow::{Context, Result};
use gmmd_core::anchor::AnchorOptions;
use gmmd_core::experiments::{embedding_mmd_baseline, EmbeddingGamma, CMMD_GAMMA};
use gmmd_core::protocol::{score_cell, GammaPolicy};
use gmmd_core::{AnchorModel, FeatureProvider, GramVector};
use gmmd_io::cache::MANIFEST_FILE;
use serde::Serialize;

use super::{cache_for, cached_vectors, describe_cache, dry_run, image_items, Ctx};
use crate::backbones::{open_layer, BackboneRef};
use crate::error::usage;
use crate::output::{num, Artifacts};
use crate::spec::RunSpec;

pub const ANCHOR_FILE: &str = "anchor.gmmd";

pub fn backbone(spec: &RunSpec) -> BackboneRef {
    spec.backbone
        .clone()
        .unwrap_or_else(|| BackboneRef::Name(gmmd_core::backbone::PIXEL_PATCH_ID.into()))
}

pub fn layer(spec: &RunSpec) -> Result<usize> {
    let l = *RunSpec::require(&spec.layer, "layer")?;
    if l == 0 {
        return Err(usage("layers are numbered from 1"));
    }
    Ok(l)
}

pub fn anchor_options(spec: &RunSpec) -> AnchorOptions {
    AnchorOptions {
        kernel: spec.kernel(),
        epsilon_floor: spec.epsilon_floor(),
        seed: spec.seed(),
        max_exact_pairs: spec.max_exact_pairs(),
    }
}

/// Fits an anchor model on the images in `dir`.
pub fn fit_anchor(spec: &RunSpec, dir: &Path, provider: &dyn FeatureProvider, source: &str, layer: usize) -> Result<AnchorModel> {
    let items = image_items(dir, "anchor folder")?;
    let vectors = cached_vectors(provider, layer, &items, &cache_for(spec))?;
    let ids = items.into_iter().map(|(id, _)| id).collect();
    Ok(AnchorModel::fit(
        provider.backbone_id(),
        layer,
        &vectors,
        ids,
        &provider.preprocessing_hash(),
        source,
        &anchor_options(spec),
    )?)
}

#[derive(Serialize)]
struct AnchorSummary<'a> {
    backbone_id: &'a str,
    backbone_source: &'a str,
    layer_index: usize,
    kernel: String,
    gamma_med: f64,
    n_anchor: usize,
    dim: usize,
    preprocessing_hash: &'a str,
}

pub fn run_anchor(ctx: &Ctx, spec: &RunSpec) -> Result<()> {
    let dir = spec
        .anchor_images
        .as_ref()
        .or(spec.images.as_ref())
        .ok_or_else(|| usage("missing required setting `anchor_images` (flag or run-spec field)"))?;
    let b = backbone(spec);
    let layer = layer(spec)?;
    let provider = open_layer(&b, layer)?;
    let out = spec.out_dir();
    let art = Artifacts::new(&out, "anchor", spec);
    let items = image_items(dir, "anchor folder")?;
    let steps = vec![
        format!("{} anchor images from {}", items.len(), dir.display()),
        format!("backbone {} layer {layer}, {}", b.source(), describe_cache(spec)),
        format!("write {}", out.join(ANCHOR_FILE).display()),
    ];
    if dry_run(ctx, &art, spec, &steps)? {
        return Ok(());
    }
    let model = fit_anchor(spec, dir, provider.as_ref(), &b.source(), layer)?;
    gmmd_io::save_anchor(&out.join(ANCHOR_FILE), &model)?;
    art.json(
        "anchor.json",
        &AnchorSummary {
            backbone_id: &model.backbone_id,
            backbone_source: &model.provenance.backbone_source,
            layer_index: model.layer_index,
            kernel: model.provenance.kernel.to_string(),
            gamma_med: model.gamma_med,
            n_anchor: model.len(),
            dim: model.dim(),
            preprocessing_hash: &model.provenance.preprocessing_hash,
        },
    )?;
    art.spec(spec)?;
    println!("gamma_med = {}", num(model.gamma_med));
    println!("wrote {}", out.join(ANCHOR_FILE).display());
    Ok(())
}

pub fn run_features(ctx: &Ctx, spec: &RunSpec) -> Result<()> {
    let dir = RunSpec::require(&spec.images, "images")?;
    let b = backbone(spec);
    let provider = b.open()?;
    let layers: Vec<usize> = if !spec.layers.is_empty() {
        spec.layers.clone()
    } else if let Some(l) = spec.layer {
        vec![l]
    } else {
        (1..=provider.layer_count()).collect()
    };
    for &l in &layers {
        provider.check_layer(l)?;
    }
    let items = image_items(dir, "image folder")?;
    let art = Artifacts::new(&spec.out_dir(), "features", spec);
    let cache = cache_for(spec);
    let steps = vec![
        format!("{} images from {}", items.len(), dir.display()),
        format!("backbone {} layers {layers:?}", b.source()),
        describe_cache(spec),
    ];
    if dry_run(ctx, &art, spec, &steps)? {
        return Ok(());
    }
    let mut rows = Vec::new();
    for &l in &layers {
        let vs = cached_vectors(provider.as_ref(), l, &items, &cache)?;
        let dir = cache.layer_dir(provider.backbone_id(), l)?;
        rows.push(vec![
            provider.backbone_id().to_string(),
            l.to_string(),
            vs.len().to_string(),
            vs.first().map(GramVector::len).unwrap_or(0).to_string(),
            dir.display().to_string(),
        ]);
    }
    art.csv("features.csv", &["backbone_id", "layer", "images", "dim", "cache_dir"], &rows)?;
    println!("cached {} layer(s) of {} images under {}", layers.len(), items.len(), cache.root().display());
    Ok(())
}

/// Reopens the backbone an anchor was fitted with and checks it still
/// produces the same features.
pub fn anchor_provider(anchor: &AnchorModel) -> Result<Box<dyn FeatureProvider>> {
    let b = BackboneRef::from_source(&anchor.provenance.backbone_source)?;
    let provider = open_layer(&b, anchor.layer_index)?;
    if provider.backbone_id() != anchor.backbone_id
        || provider.preprocessing_hash() != anchor.provenance.preprocessing_hash
    {
        return Err(usage(format!(
            "backbone {} no longer matches the one the anchor was fitted with",
            b.source()
        )));
    }
    Ok(provider)
}

/// Gram vectors of `eval`: a dumped vector folder (has a manifest) or an
/// image folder run through the anchor's backbone.
fn eval_vectors(spec: &RunSpec, eval: &Path, anchor: &AnchorModel) -> Result<Vec<GramVector>> {
    if eval.join(MANIFEST_FILE).is_file() {
        let set = gmmd_io::VectorSet::read(eval)?.expect("manifest exists");
        let m = &set.manifest;
        if m.backbone_id != anchor.backbone_id || m.layer_index != anchor.layer_index {
            return Err(usage(format!(
                "vectors in {} are {}/{} but the anchor is {}/{}",
                eval.display(),
                m.backbone_id,
                m.layer_index,
                anchor.backbone_id,
                anchor.layer_index
            )));
        }
        return Ok(set.all(eval)?.into_iter().map(|(_, v)| v).collect());
    }
    let provider = anchor_provider(anchor)?;
    let items = image_items(eval, "evaluation folder")?;
    cached_vectors(provider.as_ref(), anchor.layer_index, &items, &cache_for(spec))
}

pub fn policy_label(p: &GammaPolicy) -> &'static str {
    match p {
        GammaPolicy::MedianMultiple { .. } => "median_multiple",
        GammaPolicy::Absolute { .. } => "absolute",
    }
}

const SCORE_HEADER: [&str; 7] = ["policy", "value", "gamma", "kernel", "mmd2", "n_anchor", "n_eval"];

pub fn run_score(ctx: &Ctx, spec: &RunSpec) -> Result<()> {
    if spec.anchor_embeddings.is_some() || spec.eval_embeddings.is_some() {
        return run_embedding_score(ctx, spec);
    }
    let anchor_path = RunSpec::require(&spec.anchor, "anchor")?;
    let eval = RunSpec::require(&spec.eval, "eval")?;
    let anchor = gmmd_io::load_anchor(anchor_path)?;
    let kind = spec.kernel.unwrap_or(anchor.provenance.kernel);
    let policies = spec.gamma_policies(&[1.0])?;
    if !eval.is_dir() {
        return Err(usage(format!("evaluation folder {} is not a directory", eval.display())));
    }
    let art = Artifacts::new(&spec.out_dir(), "score", spec);
    let steps = vec![
        format!(
            "anchor {} ({}/{}, {} images, gamma_med {})",
            anchor_path.display(),
            anchor.backbone_id,
            anchor.layer_index,
            anchor.len(),
            num(anchor.gamma_med)
        ),
        format!("evaluate {} with {kind} kernel, {} bandwidth(s)", eval.display(), policies.len()),
    ];
    if dry_run(ctx, &art, spec, &steps)? {
        return Ok(());
    }
    let vectors = eval_vectors(spec, eval, &anchor)?;
    let mut rows = Vec::new();
    for p in &policies {
        let k = p.kernel(kind, anchor.gamma_med)?;
        let r = score_cell(&vectors, &anchor, &k)?;
        println!("MMD² = {} ({} {}, gamma {})", num(r.mmd2), policy_label(p), num(p.value()), gamma_text(&k));
        rows.push(vec![
            policy_label(p).into(),
            num(p.value()),
            gamma_text(&k),
            kind.to_string(),
            num(r.mmd2),
            r.n_anchor.to_string(),
            r.n_eval.to_string(),
        ]);
    }
    art.csv("scores.csv", &SCORE_HEADER, &rows)?;
    Ok(())
}

fn gamma_text(k: &gmmd_core::KernelSpec) -> String {
    k.gamma().map(num).unwrap_or_default()
}

/// Raw-embedding baseline: RBF MMD² without the Gram step, at the fixed
/// CMMD bandwidth unless factors of the median heuristic are given.
fn run_embedding_score(ctx: &Ctx, spec: &RunSpec) -> Result<()> {
    let a_path = RunSpec::require(&spec.anchor_embeddings, "anchor_embeddings")?;
    let e_path = RunSpec::require(&spec.eval_embeddings, "eval_embeddings")?;
    let gammas: Vec<EmbeddingGamma> = if spec.gamma.is_none() && !spec.gamma_factors.is_empty() {
        spec.gamma_policies(&[])?
            .iter()
            .map(|p| EmbeddingGamma::Median { factor: p.value() })
            .collect()
    } else {
        vec![EmbeddingGamma::Fixed {
            value: spec.gamma.unwrap_or(CMMD_GAMMA),
        }]
    };
    let read = |p: &Path| -> Result<Vec<Vec<f64>>> {
        let bytes = gmmd_io::read_file(p)?;
        gmmd_io::npy::decode_rows(&bytes, p).with_context(|| format!("reading embeddings {}", p.display()))
    };
    let art = Artifacts::new(&spec.out_dir(), "score", spec);
    let steps = vec![format!(
        "embedding baseline: {} vs {} with {} bandwidth(s)",
        a_path.display(),
        e_path.display(),
        gammas.len()
    )];
    if dry_run(ctx, &art, spec, &steps)? {
        return Ok(());
    }
    let (a, e) = (read(a_path)?, read(e_path)?);
    let mut rows = Vec::new();
    for g in gammas {
        let r = embedding_mmd_baseline(&a, &e, g, spec.seed())?;
        let (label, value) = match g {
            EmbeddingGamma::Fixed { value } => ("absolute", value),
            EmbeddingGamma::Median { factor } => ("median_multiple", factor),
        };
        println!("MMD² = {} ({label} {})", num(r.mmd2), num(value));
        rows.push(vec![
            label.into(),
            num(value),
            r.gamma_used.map(num).unwrap_or_default(),
            "rbf".into(),
            num(r.mmd2),
            r.n_anchor.to_string(),
            r.n_eval.to_string(),
        ]);
    }
    art.csv("scores.csv", &SCORE_HEADER, &rows)?;
    Ok(())
}
