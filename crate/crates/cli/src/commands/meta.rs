//! `meta`, `grid` and `report`: the severity-sweep protocol and its tables.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use gmmd_core::protocol::{
    grid_search, grid_size, run_meta_protocol, AnchorMode, GridReport, MetaResult,
    MetricConfig, ProtocolOptions, DEFAULT_GAMMA_FACTORS,
};
use gmmd_core::{FeatureProvider, NamedImage};

use super::anchor::{backbone, layer, policy_label};
use super::{dry_run, load_images, require_dir, Ctx};
use crate::backbones::open_layer;
use crate::error::usage;
use crate::output::{num, opt, Artifacts};
use crate::plot::{Chart, Series, Style};
use crate::spec::RunSpec;

pub const RESULTS_FILE: &str = "meta_results.csv";
const DEFAULT_TOP_K: usize = 20;

fn protocol_options(spec: &RunSpec) -> Result<ProtocolOptions> {
    Ok(ProtocolOptions {
        types: spec.types()?,
        seed: spec.seed(),
        epsilon_floor: spec.epsilon_floor(),
        max_exact_pairs: spec.max_exact_pairs(),
        reduction: gmmd_core::Reduction::Serial,
    })
}

fn mode_name(m: AnchorMode) -> &'static str {
    match m {
        AnchorMode::Reference => "reference",
        AnchorMode::Independent => "independent",
    }
}

/// References and, for the independent mode, the separate anchor images.
fn protocol_inputs(spec: &RunSpec) -> Result<(Vec<NamedImage>, Vec<NamedImage>, AnchorMode)> {
    let refs_dir = RunSpec::require(&spec.refs, "refs")?;
    let mode = spec.anchor_mode.unwrap_or_default();
    let refs = load_images(refs_dir, "reference folder")?;
    let anchor = match mode {
        AnchorMode::Reference => Vec::new(),
        AnchorMode::Independent => {
            let dir = RunSpec::require(&spec.anchor_images, "anchor_images")?;
            load_images(dir, "anchor folder")?
        }
    };
    Ok((refs, anchor, mode))
}

fn check_protocol_dirs(spec: &RunSpec) -> Result<()> {
    require_dir(RunSpec::require(&spec.refs, "refs")?, "reference folder")?;
    if spec.anchor_mode == Some(AnchorMode::Independent) {
        require_dir(RunSpec::require(&spec.anchor_images, "anchor_images")?, "anchor folder")?;
    }
    Ok(())
}

fn config_cells(c: &MetricConfig) -> Vec<String> {
    vec![
        c.backbone_id.clone(),
        c.layer_index.to_string(),
        c.kernel.to_string(),
        policy_label(&c.gamma_policy).into(),
        num(c.gamma_policy.value()),
        mode_name(c.anchor_mode).into(),
    ]
}

const CONFIG_HEADER: [&str; 6] = ["backbone_id", "layer", "kernel", "gamma_policy", "gamma_value", "anchor_mode"];

/// One row per configuration: ranked results first, then failures.
fn write_results(art: &Artifacts, types: &[u8], report: &GridReport) -> Result<()> {
    let mut header: Vec<String> = vec!["rank".into()];
    header.extend(CONFIG_HEADER.iter().map(|s| s.to_string()));
    header.extend(["status", "avg_rho", "avg_tau"].map(String::from));
    header.extend(types.iter().map(|t| format!("rho_{t}")));
    header.extend(types.iter().map(|t| format!("tau_{t}")));
    let mut rows = Vec::with_capacity(report.config_count());
    for (i, r) in report.ranked.iter().enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(config_cells(&r.config));
        let excluded: Vec<String> = r
            .per_type
            .values()
            .filter(|t| t.rho.is_none())
            .map(|t| t.type_id.to_string())
            .collect();
        row.push(if excluded.is_empty() {
            "ok".into()
        } else {
            format!("ok; undefined for types {}", excluded.join(" "))
        });
        row.push(opt(r.avg_rho));
        row.push(opt(r.avg_tau));
        row.extend(types.iter().map(|t| opt(r.per_type.get(t).and_then(|x| x.rho))));
        row.extend(types.iter().map(|t| opt(r.per_type.get(t).and_then(|x| x.tau))));
        rows.push(row);
    }
    for f in &report.failed {
        let mut row = vec![String::new()];
        row.extend(config_cells(&f.config));
        row.push(format!("failed: {}", f.error));
        row.extend(std::iter::repeat_n(String::new(), 2 + 2 * types.len()));
        rows.push(row);
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    art.csv(RESULTS_FILE, &header_refs, &rows)?;

    let mut cells = Vec::new();
    for r in &report.ranked {
        for t in r.per_type.values() {
            for (level, s) in t.scores.iter().enumerate() {
                let mut row = config_cells(&r.config);
                row.extend([t.type_id.to_string(), (level + 1).to_string(), num(*s)]);
                cells.push(row);
            }
        }
    }
    let mut cell_header: Vec<&str> = CONFIG_HEADER.to_vec();
    cell_header.extend(["type_id", "level", "mmd2"]);
    art.csv("cell_scores.csv", &cell_header, &cells)?;
    Ok(())
}

/// Top-k table in the order of the ranking.
fn top_rows(ranked: &[TopRow], k: usize) -> Vec<Vec<String>> {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, r)| {
            vec![
                (i + 1).to_string(),
                r.backbone_id.clone(),
                r.layer.to_string(),
                r.gamma_value.clone(),
                r.avg_rho.clone(),
                r.avg_tau.clone(),
            ]
        })
        .collect()
}

const TOP_HEADER: [&str; 6] = ["rank", "backbone_id", "layer", "gamma_factor", "avg_rho", "avg_tau"];

#[derive(Debug, Clone, PartialEq)]
struct TopRow {
    backbone_id: String,
    layer: usize,
    gamma_value: String,
    avg_rho: String,
    avg_tau: String,
}

fn top_of(report: &GridReport) -> Vec<TopRow> {
    report
        .ranked
        .iter()
        .map(|r| TopRow {
            backbone_id: r.config.backbone_id.clone(),
            layer: r.config.layer_index,
            gamma_value: num(r.config.gamma_policy.value()),
            avg_rho: opt(r.avg_rho),
            avg_tau: opt(r.avg_tau),
        })
        .collect()
}

fn write_top(art: &Artifacts, top: &[TopRow], k: usize) -> Result<()> {
    let rows = top_rows(top, k);
    art.csv("top_k.csv", &TOP_HEADER, &rows)?;
    let mut md = format!("<!-- {} -->\n\n| {} |\n|{}|\n", art.stamp(), TOP_HEADER.join(" | "), "---|".repeat(6));
    for r in &rows {
        md.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    art.text("top_k.md", &md)?;
    Ok(())
}

/// Score against severity for each type of one configuration.
fn monotonicity_chart(r: &MetaResult) -> Chart {
    Chart {
        title: format!(
            "{} layer {} gamma {} ({})",
            r.config.backbone_id,
            r.config.layer_index,
            num(r.config.gamma_policy.value()),
            policy_label(&r.config.gamma_policy)
        ),
        x_label: "severity level".into(),
        y_label: "MMD²".into(),
        series: r
            .per_type
            .values()
            .map(|t| {
                let label = format!("type {} (rho {})", t.type_id, t.rho.map(|v| format!("{v:.3}")).unwrap_or("n/a".into()));
                Series::new(
                    label,
                    Style::Line,
                    t.scores.iter().enumerate().map(|(i, &s)| ((i + 1) as f64, s)).collect(),
                )
            })
            .collect(),
        ..Default::default()
    }
}

pub fn run_meta(ctx: &Ctx, spec: &RunSpec) -> Result<()> {
    let b = backbone(spec);
    let layer = layer(spec)?;
    let provider = open_layer(&b, layer)?;
    let policies = spec.gamma_policies(&[1.0])?;
    let options = protocol_options(spec)?;
    check_protocol_dirs(spec)?;
    let art = Artifacts::new(&spec.out_dir(), "meta", spec);
    let steps = vec![
        format!("backbone {} layer {layer}, {} bandwidth(s)", b.source(), policies.len()),
        format!("types {:?} x 10 levels, seed {}", options.types, options.seed),
        format!("write {RESULTS_FILE}, cell_scores.csv, monotonicity.svg"),
    ];
    if dry_run(ctx, &art, spec, &steps)? {
        return Ok(());
    }
    let (refs, anchor, mode) = protocol_inputs(spec)?;
    let mut report = GridReport {
        ranked: Vec::new(),
        failed: Vec::new(),
    };
    for p in &policies {
        let config = MetricConfig {
            backbone_id: provider.backbone_id().to_string(),
            layer_index: layer,
            kernel: spec.kernel(),
            gamma_policy: *p,
            anchor_mode: mode,
        };
        let r = run_meta_protocol(&refs, &anchor, &config, provider.as_ref(), &options)?;
        println!(
            "{} layer {layer} gamma {}: avg rho {} avg tau {}",
            config.backbone_id,
            num(p.value()),
            opt(r.avg_rho),
            opt(r.avg_tau)
        );
        report.ranked.push(r);
    }
    write_results(&art, &options.types, &report)?;
    art.svg("monotonicity.svg", &monotonicity_chart(&report.ranked[0]))?;
    art.spec(spec)?;
    Ok(())
}

pub fn run_grid(ctx: &Ctx, spec: &RunSpec) -> Result<()> {
    if spec.backbones.is_empty() {
        return Err(usage("grid needs at least one backbone (`backbones` or --backbone)"));
    }
    let providers: Vec<Box<dyn FeatureProvider>> =
        spec.backbones.iter().map(|b| b.open()).collect::<Result<_>>()?;
    let policies = spec.gamma_policies(&DEFAULT_GAMMA_FACTORS)?;
    let options = protocol_options(spec)?;
    let top_k = spec.top_k.unwrap_or(DEFAULT_TOP_K);
    check_protocol_dirs(spec)?;
    let layer_counts: Vec<usize> = providers.iter().map(|p| p.layer_count()).collect();
    let art = Artifacts::new(&spec.out_dir(), "grid", spec);
    let mut steps: Vec<String> = providers
        .iter()
        .map(|p| format!("backbone {} with {} layers", p.backbone_id(), p.layer_count()))
        .collect();
    steps.push(format!(
        "{} configurations ({} bandwidths), types {:?}",
        grid_size(&layer_counts, policies.len()),
        policies.len(),
        options.types
    ));
    steps.push(format!("write {RESULTS_FILE}, top_k.csv, top_k.md, grid.svg"));
    if dry_run(ctx, &art, spec, &steps)? {
        return Ok(());
    }
    let (refs, anchor, mode) = protocol_inputs(spec)?;
    let refs_dyn: Vec<&dyn FeatureProvider> = providers.iter().map(|p| p.as_ref()).collect();
    let report = grid_search(&refs_dyn, &policies, spec.kernel(), mode, &refs, &anchor, &options)?;
    for f in &report.failed {
        log::warn!(
            "{} layer {} gamma {}: {}",
            f.config.backbone_id,
            f.config.layer_index,
            num(f.config.gamma_policy.value()),
            f.error
        );
    }
    write_results(&art, &options.types, &report)?;
    let top = top_of(&report);
    write_top(&art, &top, top_k)?;
    art.svg("grid.svg", &grid_chart(&report))?;
    art.spec(spec)?;
    println!(
        "{} configurations: {} ranked, {} failed",
        report.config_count(),
        report.ranked.len(),
        report.failed.len()
    );
    for r in top_rows(&top, top_k.min(5)) {
        println!("  #{} {} layer {} gamma {}: rho {} tau {}", r[0], r[1], r[2], r[3], r[4], r[5]);
    }
    Ok(())
}

/// Best average ρ over bandwidths, per layer, one line per backbone.
fn grid_chart(report: &GridReport) -> Chart {
    let mut best: BTreeMap<&str, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in &report.ranked {
        let rho = r.avg_rho.unwrap_or(f64::NAN);
        let slot = best
            .entry(r.config.backbone_id.as_str())
            .or_default()
            .entry(r.config.layer_index)
            .or_insert(f64::NEG_INFINITY);
        if rho > *slot {
            *slot = rho;
        }
    }
    Chart {
        title: "Best average Spearman rho per layer".into(),
        x_label: "layer".into(),
        y_label: "avg rho (best bandwidth)".into(),
        series: best
            .into_iter()
            .map(|(b, layers)| {
                Series::new(b, Style::Line, layers.into_iter().map(|(l, v)| (l as f64, v)).collect())
            })
            .collect(),
        ..Default::default()
    }
}

/// Reads ranked rows back from a `meta_results.csv`.
fn read_results(path: &Path) -> Result<Vec<TopRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| usage(format!("{} has no {name} column", path.display())))
    };
    let (rank, b, l, g, rho, tau) = (
        col("rank")?,
        col("backbone_id")?,
        col("layer")?,
        col("gamma_value")?,
        col("avg_rho")?,
        col("avg_tau")?,
    );
    let mut out: Vec<(usize, TopRow)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{} line {}", path.display(), i + 3))?;
        let Ok(r) = rec[rank].parse::<usize>() else {
            continue; // failed configuration
        };
        out.push((
            r,
            TopRow {
                backbone_id: rec[b].to_string(),
                layer: rec[l]
                    .parse()
                    .map_err(|_| usage(format!("{}: bad layer {:?}", path.display(), &rec[l])))?,
                gamma_value: rec[g].to_string(),
                avg_rho: rec[rho].to_string(),
                avg_tau: rec[tau].to_string(),
            },
        ));
    }
    out.sort_by_key(|(r, _)| *r);
    Ok(out.into_iter().map(|(_, t)| t).collect())
}

pub fn run_report(ctx: &Ctx, spec: &RunSpec) -> Result<()> {
    let results = RunSpec::require(&spec.results, "results")?;
    let top_k = spec.top_k.unwrap_or(DEFAULT_TOP_K);
    let art = Artifacts::new(&spec.out_dir(), "report", spec);
    let rows = read_results(results)?;
    let steps = vec![
        format!("{} ranked configurations in {}", rows.len(), results.display()),
        format!("write top-{top_k} table and report.svg"),
    ];
    if dry_run(ctx, &art, spec, &steps)? {
        return Ok(());
    }
    write_top(&art, &rows, top_k)?;
    let points: Vec<(f64, f64)> = rows
        .iter()
        .take(top_k)
        .enumerate()
        .filter_map(|(i, r)| r.avg_rho.parse().ok().map(|v| ((i + 1) as f64, v)))
        .collect();
    let chart = Chart {
        title: format!("Top {top_k} configurations"),
        x_label: "rank".into(),
        y_label: "avg rho".into(),
        series: vec![Series::new("avg rho", Style::Points, points)],
        ..Default::default()
    };
    art.svg("report.svg", &chart)?;
    for r in top_rows(&rows, top_k) {
        println!("{}", r.join("\t"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use gmmd_core::protocol::GammaPolicy;

    #[test]
    fn results_round_trip_through_report_reader() {
        let d = tempfile::tempdir().unwrap();
        let art = Artifacts::new(d.path(), "grid", &RunSpec::default());
        let mk = |layer, rho: f64| MetaResult {
            config: MetricConfig {
                backbone_id: "toy".into(),
                layer_index: layer,
                kernel: gmmd_core::KernelKind::Rbf,
                gamma_policy: GammaPolicy::MedianMultiple { factor: 0.5 },
                anchor_mode: AnchorMode::Reference,
            },
            per_type: BTreeMap::new(),
            avg_rho: Some(rho),
            avg_tau: Some(rho / 2.0),
        };
        let report = GridReport {
            ranked: vec![mk(2, 0.9), mk(1, 0.3)],
            failed: vec![gmmd_core::protocol::FailedConfig {
                config: mk(3, 0.0).config,
                error: "degenerate bandwidth".into(),
            }],
        };
        write_results(&art, &[1, 8], &report).unwrap();
        let rows = read_results(&d.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(rows, top_of(&report));
        let text = std::fs::read_to_string(d.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 2 + 3);
        assert!(text.contains("failed: degenerate bandwidth"));
    }
}
