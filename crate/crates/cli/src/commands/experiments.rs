//! `kadid`, `raise` and `inversion`.

use std::path::{Path, PathBuf};

use anyhow::Result;
use gmmd_core::experiments::{
    build_ranked_groups, run_group_experiment, run_inversion_experiment, GroupExperimentOptions,
    GroupExperimentResult, GroupedDataset, OrderingKey,
};
use gmmd_core::protocol::GammaPolicy;
use gmmd_core::rank::DEFAULT_PERMUTATIONS;
use gmmd_core::{AnchorModel, FeatureProvider, GramVector};
use gmmd_io::manifests::{read_inversion_json, read_kadid_csv, read_raise_csv, resolve_image, OpinionEntry};
use serde::Serialize;

use super::anchor::{anchor_provider, backbone, fit_anchor, layer, policy_label};
use super::{cache_for, cached_vectors, describe_cache, dry_run, image_items, require_dir, Ctx};
use crate::backbones::open_layer;
use crate::output::{num, Artifacts};
use crate::plot::{Chart, Series, Style};
use crate::spec::RunSpec;

pub const KADID_GROUP_SIZE: usize = 81;
pub const RAISE_GROUP_SIZE: usize = 20;
pub const INVERSION_FACTORS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 10.0];

#[derive(Clone, Copy)]
enum Dataset {
    Kadid,
    Raise,
}

impl Dataset {
    fn command(self) -> &'static str {
        match self {
            Dataset::Kadid => "kadid",
            Dataset::Raise => "raise",
        }
    }

    fn opinion(self) -> &'static str {
        match self {
            Dataset::Kadid => "DMOS",
            Dataset::Raise => "MOS",
        }
    }
}

/// RAISE rows kept for scoring: the listed sources, or every generator
/// (everything except `real`) by default.
fn filter_sources(rows: Vec<OpinionEntry>, spec: &RunSpec) -> Vec<OpinionEntry> {
    let keep = |src: &str| {
        if !spec.sources.is_empty() {
            spec.sources.iter().any(|s| s.eq_ignore_ascii_case(src))
        } else {
            spec.include_real.unwrap_or(false) || !src.eq_ignore_ascii_case("real")
        }
    };
    rows.into_iter()
        .filter(|r| r.source.as_deref().is_none_or(keep))
        .collect()
}

fn groups_for(dataset: Dataset, spec: &RunSpec, manifest: &Path) -> Result<GroupedDataset> {
    let (rows, size, key, descending) = match dataset {
        Dataset::Kadid => (
            read_kadid_csv(manifest)?,
            KADID_GROUP_SIZE,
            OrderingKey::Dmos,
            spec.invert_order.unwrap_or(false),
        ),
        Dataset::Raise => (
            filter_sources(read_raise_csv(manifest)?, spec),
            RAISE_GROUP_SIZE,
            OrderingKey::Mos,
            spec.invert_order.unwrap_or(false),
        ),
    };
    let scores: Vec<(String, f64)> = rows.into_iter().map(|r| (r.image_id, r.score)).collect();
    Ok(build_ranked_groups(
        &scores,
        spec.group_size.unwrap_or(size),
        key,
        descending,
    )?)
}

#[derive(Serialize)]
struct GroupSummary<'a> {
    dataset: &'static str,
    ordering_key: OrderingKey,
    /// Group 0 holds the highest opinion scores when set.
    descending: bool,
    ordering: String,
    group_size: usize,
    groups: usize,
    anchor_backbone: &'a str,
    anchor_layer: usize,
    kernel: String,
    runs: Vec<PolicyRun<'a>>,
}

#[derive(Serialize)]
struct PolicyRun<'a> {
    gamma_policy: &'static str,
    gamma_value: f64,
    gamma: Option<f64>,
    rho_rank: f64,
    tau_rank: f64,
    rho_opinion: f64,
    tau_opinion: f64,
    slope: f64,
    intercept: f64,
    p_value: f64,
    permutations: usize,
    #[serde(skip)]
    result: &'a GroupExperimentResult,
}

fn run_groups(ctx: &Ctx, spec: &RunSpec, dataset: Dataset) -> Result<()> {
    let anchor_path = RunSpec::require(&spec.anchor, "anchor")?;
    let manifest = RunSpec::require(&spec.manifest, "manifest")?;
    let images = RunSpec::require(&spec.images, "images")?;
    require_dir(images, "image folder")?;
    let anchor = gmmd_io::load_anchor(anchor_path)?;
    let kind = spec.kernel.unwrap_or(anchor.provenance.kernel);
    let policies = spec.gamma_policies(&[1.0])?;
    let permutations = spec.permutations.unwrap_or(DEFAULT_PERMUTATIONS);
    let groups = groups_for(dataset, spec, manifest)?;
    let ordering = format!(
        "group 0 holds the {} {}",
        if groups.descending { "highest" } else { "lowest" },
        dataset.opinion()
    );
    let art = Artifacts::new(&spec.out_dir(), dataset.command(), spec);
    let steps = vec![
        format!(
            "{} groups of {} from {}; {ordering}",
            groups.groups.len(),
            groups.group_size,
            manifest.display()
        ),
        format!(
            "anchor {} ({}/{}), {kind} kernel, {} bandwidth(s), {permutations} permutations",
            anchor_path.display(),
            anchor.backbone_id,
            anchor.layer_index,
            policies.len()
        ),
        describe_cache(spec),
    ];
    if dry_run(ctx, &art, spec, &steps)? {
        return Ok(());
    }
    let provider = anchor_provider(&anchor)?;
    let cache = cache_for(spec);
    let source = |ids: &[String]| -> gmmd_core::Result<Vec<GramVector>> {
        let wrap = |e: anyhow::Error| gmmd_core::Error::InvalidInput(format!("{e:#}"));
        let items = ids
            .iter()
            .map(|id| Ok((id.clone(), resolve_image(images, id)?)))
            .collect::<Result<Vec<(String, PathBuf)>>>()
            .map_err(wrap)?;
        cached_vectors(provider.as_ref(), anchor.layer_index, &items, &cache).map_err(wrap)
    };
    let options = GroupExperimentOptions {
        permutations,
        seed: spec.seed(),
    };
    let mut results = Vec::new();
    for p in &policies {
        let k = p.kernel(kind, anchor.gamma_med)?;
        let r = run_group_experiment(&groups, &anchor, &k, &source, &options)?;
        println!(
            "{} {}: rho(rank) {:.4} rho({}) {:.4} tau({}) {:.4} p {}",
            policy_label(p),
            num(p.value()),
            r.rho_rank,
            dataset.opinion(),
            r.rho_opinion,
            dataset.opinion(),
            r.tau_opinion,
            num(r.p_value)
        );
        results.push((*p, k.gamma(), r));
    }

    let group_rows: Vec<Vec<String>> = groups
        .groups
        .iter()
        .flat_map(|g| {
            g.image_ids
                .iter()
                .map(move |id| vec![g.rank.to_string(), id.clone(), num(g.mean_score)])
        })
        .collect();
    art.csv("groups.csv", &["group", "image_id", "group_mean_opinion"], &group_rows)?;

    let mut score_rows = Vec::new();
    for (p, gamma, r) in &results {
        for g in &r.per_group {
            score_rows.push(vec![
                policy_label(p).into(),
                num(p.value()),
                gamma.map(num).unwrap_or_default(),
                g.rank.to_string(),
                num(g.mean_opinion),
                num(g.mmd.mmd2),
            ]);
        }
    }
    art.csv(
        "scores.csv",
        &["gamma_policy", "gamma_value", "gamma", "group", "mean_opinion", "mmd2"],
        &score_rows,
    )?;

    let summary = GroupSummary {
        dataset: dataset.command(),
        ordering_key: groups.ordering_key,
        descending: groups.descending,
        ordering,
        group_size: groups.group_size,
        groups: groups.groups.len(),
        anchor_backbone: &anchor.backbone_id,
        anchor_layer: anchor.layer_index,
        kernel: kind.to_string(),
        runs: results
            .iter()
            .map(|(p, gamma, r)| PolicyRun {
                gamma_policy: policy_label(p),
                gamma_value: p.value(),
                gamma: *gamma,
                rho_rank: r.rho_rank,
                tau_rank: r.tau_rank,
                rho_opinion: r.rho_opinion,
                tau_opinion: r.tau_opinion,
                slope: r.fit.slope,
                intercept: r.fit.intercept,
                p_value: r.p_value,
                permutations,
                result: r,
            })
            .collect(),
    };
    art.json("summary.json", &summary)?;
    art.svg("score_vs_rank.svg", &rank_chart(dataset, &summary))?;
    art.svg("regression.svg", &regression_chart(dataset, &summary))?;
    art.spec(spec)?;
    Ok(())
}

fn run_label(r: &PolicyRun) -> String {
    format!("{} {}", r.gamma_policy, num(r.gamma_value))
}

fn rank_chart(dataset: Dataset, s: &GroupSummary) -> Chart {
    Chart {
        title: format!("{}: GMMD by group rank", dataset.command()),
        x_label: format!("group rank ({})", s.ordering),
        y_label: "MMD²".into(),
        series: s
            .runs
            .iter()
            .map(|r| {
                let pts = r.result.per_group.iter().map(|g| (g.rank as f64, g.mmd.mmd2)).collect();
                Series::new(run_label(r), Style::Line, pts)
            })
            .collect(),
        ..Default::default()
    }
}

fn regression_chart(dataset: Dataset, s: &GroupSummary) -> Chart {
    let mut series = Vec::new();
    for r in &s.runs {
        let pts: Vec<(f64, f64)> = r.result.per_group.iter().map(|g| (g.mean_opinion, g.mmd.mmd2)).collect();
        let (lo, hi) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let line = [lo, hi].map(|x| (x, r.intercept + r.slope * x)).to_vec();
        series.push(Series::new(run_label(r), Style::Points, pts));
        series.push(Series::new(format!("fit, p={}", num(r.p_value)), Style::Line, line));
    }
    Chart {
        title: format!("{}: GMMD against group mean {}", dataset.command(), dataset.opinion()),
        x_label: format!("group mean {}", dataset.opinion()),
        y_label: "MMD²".into(),
        series,
        ..Default::default()
    }
}

pub fn run_kadid(ctx: &Ctx, spec: &RunSpec) -> Result<()> {
    run_groups(ctx, spec, Dataset::Kadid)
}

pub fn run_raise(ctx: &Ctx, spec: &RunSpec) -> Result<()> {
    run_groups(ctx, spec, Dataset::Raise)
}

#[derive(Serialize)]
struct InversionSummary {
    anchor_backbone: String,
    anchor_layer: usize,
    gamma_med: f64,
    kernel: String,
    n_synthetic: usize,
    n_real: usize,
    /// Ratio = synthetic score / real score; below 1 means inverted.
    results: Vec<gmmd_core::experiments::InversionResult>,
    any_inverted: bool,
}

pub fn run_inversion(ctx: &Ctx, spec: &RunSpec) -> Result<()> {
    let manifest_path = RunSpec::require(&spec.manifest, "manifest")?;
    let manifest = read_inversion_json(manifest_path)?;
    let policies = spec.gamma_policies(&INVERSION_FACTORS)?;
    for d in [&manifest.eval_dirs.synthetic, &manifest.eval_dirs.real] {
        require_dir(d, "evaluation folder")?;
    }
    let art = Artifacts::new(&spec.out_dir(), "inversion", spec);
    let anchor_step = match &spec.anchor {
        Some(p) => format!("anchor {}", p.display()),
        None => format!(
            "fit anchor on {} with {} layer {}",
            manifest.anchor_dir.display(),
            backbone(spec).source(),
            layer(spec)?
        ),
    };
    let steps = vec![
        anchor_step,
        format!(
            "score synthetic {} and real {} at {} bandwidth(s)",
            manifest.eval_dirs.synthetic.display(),
            manifest.eval_dirs.real.display(),
            policies.len()
        ),
        describe_cache(spec),
    ];
    if dry_run(ctx, &art, spec, &steps)? {
        return Ok(());
    }
    let (anchor, provider): (AnchorModel, Box<dyn FeatureProvider>) = match &spec.anchor {
        Some(p) => {
            let a = gmmd_io::load_anchor(p)?;
            let provider = anchor_provider(&a)?;
            (a, provider)
        }
        None => {
            let b = backbone(spec);
            let l = layer(spec)?;
            let provider = open_layer(&b, l)?;
            let a = fit_anchor(spec, &manifest.anchor_dir, provider.as_ref(), &b.source(), l)?;
            (a, provider)
        }
    };
    let kind = spec.kernel.unwrap_or(anchor.provenance.kernel);
    let cache = cache_for(spec);
    let load = |dir: &Path| -> Result<Vec<GramVector>> {
        let items = image_items(dir, "evaluation folder")?;
        cached_vectors(provider.as_ref(), anchor.layer_index, &items, &cache)
    };
    let synthetic = load(&manifest.eval_dirs.synthetic)?;
    let real = load(&manifest.eval_dirs.real)?;
    let results = run_inversion_experiment(&anchor, &synthetic, &real, kind, &policies)?;

    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                policy_label(&r.gamma_policy).into(),
                num(r.gamma_policy.value()),
                num(r.score_synthetic),
                num(r.score_real),
                num(r.ratio),
                r.inverted.to_string(),
            ]
        })
        .collect();
    art.csv(
        "inversion.csv",
        &["gamma_policy", "gamma_value", "score_synthetic", "score_real", "ratio", "inverted"],
        &rows,
    )?;
    for r in &results {
        println!(
            "{} {}: ratio {}{}",
            policy_label(&r.gamma_policy),
            num(r.gamma_policy.value()),
            num(r.ratio),
            if r.inverted { " (inverted)" } else { "" }
        );
    }
    art.svg("inversion.svg", &inversion_chart(&results))?;
    art.json(
        "summary.json",
        &InversionSummary {
            anchor_backbone: anchor.backbone_id.clone(),
            anchor_layer: anchor.layer_index,
            gamma_med: anchor.gamma_med,
            kernel: kind.to_string(),
            n_synthetic: synthetic.len(),
            n_real: real.len(),
            any_inverted: results.iter().any(|r| r.inverted),
            results,
        },
    )?;
    art.spec(spec)?;
    Ok(())
}

fn inversion_chart(results: &[gmmd_core::experiments::InversionResult]) -> Chart {
    let labels = |r: &gmmd_core::experiments::InversionResult| match r.gamma_policy {
        GammaPolicy::MedianMultiple { factor } => format!("{}x", num(factor)),
        GammaPolicy::Absolute { gamma } => num(gamma),
    };
    let bars = |f: fn(&gmmd_core::experiments::InversionResult) -> f64| -> Vec<(f64, f64)> {
        results.iter().enumerate().map(|(i, r)| (i as f64, f(r))).collect()
    };
    Chart {
        title: "Synthetic vs real score across bandwidths".into(),
        x_label: "gamma".into(),
        y_label: "MMD²".into(),
        series: vec![
            Series::new("synthetic", Style::Bars, bars(|r| r.score_synthetic)),
            Series::new("real", Style::Bars, bars(|r| r.score_real)),
        ],
        categories: results.iter().map(labels).collect(),
        reference: None,
    }
}
