//! Meta-metric protocol: score every degradation cell against an anchor,
//! check that scores grow with severity, and search a configuration grid.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchor::{gram_vectors_multi, named_refs, AnchorModel, AnchorOptions};
use crate::backbone::FeatureProvider;
use crate::degrade::{degrade_cell, DegradationSpec, LEVEL_COUNT, TYPE_COUNT};
use crate::error::{Error, Result};
use crate::gram::GramVector;
use crate::image::{ImageBuffer, NamedImage};
use crate::kernel::{KernelKind, KernelSpec, DEFAULT_MAX_EXACT_PAIRS};
use crate::mmd::{MmdResult, PairwiseTable, Reduction};
use crate::rank::{kendall_tau, spearman_rho};

/// The ten bandwidth multiples of the reference grid.
pub const DEFAULT_GAMMA_FACTORS: [f64; 10] = [0.01, 0.03, 0.1, 0.3, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum GammaPolicy {
    MedianMultiple { factor: f64 },
    Absolute { gamma: f64 },
}

impl GammaPolicy {
    pub fn resolve(&self, gamma_med: f64) -> f64 {
        match *self {
            GammaPolicy::MedianMultiple { factor } => factor * gamma_med,
            GammaPolicy::Absolute { gamma } => gamma,
        }
    }

    /// The number reported in the factor column.
    pub fn value(&self) -> f64 {
        match *self {
            GammaPolicy::MedianMultiple { factor } => factor,
            GammaPolicy::Absolute { gamma } => gamma,
        }
    }

    pub fn kernel(&self, kind: KernelKind, gamma_med: f64) -> Result<KernelSpec> {
        match kind {
            KernelKind::Rbf => KernelSpec::rbf(self.resolve(gamma_med)),
            KernelKind::Polynomial => Ok(KernelSpec::Polynomial),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// The clean references double as the anchor.
    #[default]
    Reference,
    /// A disjoint set of clean images forms the anchor.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub backbone_id: String,
    pub layer_index: usize,
    pub kernel: KernelKind,
    pub gamma_policy: GammaPolicy,
    pub anchor_mode: AnchorMode,
}

impl MetricConfig {
    fn sort_key_cmp(&self, other: &Self) -> Ordering {
        self.backbone_id
            .cmp(&other.backbone_id)
            .then(self.layer_index.cmp(&other.layer_index))
            .then(self.gamma_policy.value().total_cmp(&other.gamma_policy.value()))
    }
}

/// Monotonicity of one degradation type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeResult {
    pub type_id: u8,
    /// Scores for levels 1..=10.
    pub scores: Vec<f64>,
    pub rho: Option<f64>,
    pub tau: Option<f64>,
    /// Why the correlation is undefined, when it is.
    pub note: Option<String>,
}

impl TypeResult {
    pub fn correlation(&self) -> Result<(f64, f64)> {
        match (self.rho, self.tau) {
            (Some(r), Some(t)) => Ok((r, t)),
            _ => Err(Error::UndefinedCorrelation(
                self.note.clone().unwrap_or_else(|| format!("type {}", self.type_id)),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResult {
    pub config: MetricConfig,
    pub per_type: BTreeMap<u8, TypeResult>,
    /// Mean over types with a defined correlation; `None` if there are none.
    pub avg_rho: Option<f64>,
    pub avg_tau: Option<f64>,
}

/// Per-type correlations of scores against severity, and their averages.
/// Types whose correlation is undefined are excluded from the averages.
pub fn summarize(config: MetricConfig, scores: &BTreeMap<u8, Vec<f64>>) -> MetaResult {
    let mut per_type = BTreeMap::new();
    let (mut rhos, mut taus) = (Vec::new(), Vec::new());
    for (&t, ys) in scores {
        let xs: Vec<f64> = (1..=ys.len()).map(|l| l as f64).collect();
        let res = spearman_rho(&xs, ys).and_then(|r| Ok((r, kendall_tau(&xs, ys)?)));
        let entry = match res {
            Ok((r, tau)) => {
                rhos.push(r);
                taus.push(tau);
                TypeResult {
                    type_id: t,
                    scores: ys.clone(),
                    rho: Some(r),
                    tau: Some(tau),
                    note: None,
                }
            }
            Err(e) => {
                warn!(
                    "{} layer {}: type {t} excluded from averages: {e}",
                    config.backbone_id, config.layer_index
                );
                TypeResult {
                    type_id: t,
                    scores: ys.clone(),
                    rho: None,
                    tau: None,
                    note: Some(e.to_string()),
                }
            }
        };
        per_type.insert(t, entry);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    MetaResult {
        avg_rho: mean(&rhos),
        avg_tau: mean(&taus),
        config,
        per_type,
    }
}

/// Standardizes `eval` with the anchor's statistics and takes the unbiased
/// MMD² against the stored anchor vectors.
pub fn score_cell(eval: &[GramVector], anchor: &AnchorModel, kernel: &KernelSpec) -> Result<MmdResult> {
    let ev = anchor.standardize(eval)?;
    let table = PairwiseTable::compute(&anchor.anchor_vectors, &ev, kernel.kind(), Reduction::Serial)?;
    table.mmd2_unbiased(kernel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOptions {
    /// Degradation types to evaluate; all 20 by default.
    pub types: Vec<u8>,
    pub seed: u64,
    pub epsilon_floor: f64,
    pub max_exact_pairs: usize,
    pub reduction: Reduction,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            types: (1..=TYPE_COUNT).collect(),
            seed: 0,
            epsilon_floor: crate::gram::DEFAULT_EPSILON_FLOOR,
            max_exact_pairs: DEFAULT_MAX_EXACT_PAIRS,
            reduction: Reduction::Serial,
        }
    }
}

/// Chooses the anchor set for a mode and checks it against the references.
pub fn resolve_anchor<'a>(
    mode: AnchorMode,
    refs: &'a [NamedImage],
    anchor: &'a [NamedImage],
) -> Result<&'a [NamedImage]> {
    match mode {
        AnchorMode::Reference => {
            let same = anchor.is_empty()
                || (anchor.len() == refs.len() && anchor.iter().zip(refs).all(|(a, r)| a.id == r.id));
            if !same {
                return Err(Error::invalid("reference anchor mode expects the anchor to be the reference set"));
            }
            Ok(refs)
        }
        AnchorMode::Independent => {
            let ids: BTreeSet<&str> = refs.iter().map(|r| r.id.as_str()).collect();
            if let Some(dup) = anchor.iter().find(|a| ids.contains(a.id.as_str())) {
                return Err(Error::invalid(format!(
                    "independent anchor shares image id {} with the references",
                    dup.id
                )));
            }
            if anchor.is_empty() {
                return Err(Error::invalid("independent anchor mode needs anchor images"));
            }
            Ok(anchor)
        }
    }
}

/// Scores for one (layer, γ policy) combination keyed by `(type, level)`.
type CellScores = BTreeMap<(u8, u8), f64>;

/// Shared engine: degrades each cell once, extracts every requested layer
/// in one pass per image, and scores all policies from one pair table per
/// (cell, layer).
fn score_matrix(
    provider: &dyn FeatureProvider,
    layers: &[usize],
    policies: &[GammaPolicy],
    kernel: KernelKind,
    refs: &[NamedImage],
    anchor: &[NamedImage],
    options: &ProtocolOptions,
) -> Result<Vec<Vec<Result<CellScores>>>> {
    let anchor_refs = named_refs(anchor);
    let anchor_vecs = gram_vectors_multi(provider, layers, &anchor_refs)?;
    let anchor_opts = AnchorOptions {
        kernel,
        epsilon_floor: options.epsilon_floor,
        seed: options.seed,
        max_exact_pairs: options.max_exact_pairs,
    };
    let ids: Vec<String> = anchor.iter().map(|a| a.id.clone()).collect();
    let models: Vec<Result<AnchorModel>> = layers
        .iter()
        .zip(&anchor_vecs)
        .map(|(&l, vecs)| {
            AnchorModel::fit(
                provider.backbone_id(),
                l,
                vecs,
                ids.clone(),
                &provider.preprocessing_hash(),
                provider.backbone_id(),
                &anchor_opts,
            )
        })
        .collect();

    let cells: Vec<DegradationSpec> = options
        .types
        .iter()
        .flat_map(|&t| (1..=LEVEL_COUNT).map(move |l| DegradationSpec::new(t, l)))
        .collect::<Result<_>>()?;
    let ref_pairs = named_refs(refs);

    // [cell][layer][policy]
    let per_cell: Vec<Vec<Result<Vec<f64>>>> = cells
        .par_iter()
        .map(|spec| -> Result<Vec<Result<Vec<f64>>>> {
            let degraded = degrade_cell(&ref_pairs, spec, options.seed)?;
            let named: Vec<(&str, &ImageBuffer)> =
                ref_pairs.iter().map(|(id, _)| *id).zip(degraded.iter()).collect();
            let vecs = gram_vectors_multi(provider, layers, &named)
                .map_err(|e| e.in_cell(spec.type_id, spec.level, "*"))?;
            Ok(models
                .iter()
                .zip(&vecs)
                .map(|(model, ev)| {
                    let model = model.as_ref().map_err(|e| Error::invalid(e.to_string()))?;
                    let std = model.standardize(ev)?;
                    let table =
                        PairwiseTable::compute(&model.anchor_vectors, &std, kernel, options.reduction)?;
                    policies
                        .iter()
                        .map(|p| Ok(table.mmd2_unbiased(&p.kernel(kernel, model.gamma_med)?)?.mmd2))
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(layers.len());
    for li in 0..layers.len() {
        let mut row = Vec::with_capacity(policies.len());
        for pi in 0..policies.len() {
            let mut scores = CellScores::new();
            let mut failure = None;
            for (spec, per_layer) in cells.iter().zip(&per_cell) {
                match &per_layer[li] {
                    Ok(v) => {
                        scores.insert((spec.type_id, spec.level), v[pi]);
                    }
                    Err(e) => {
                        failure.get_or_insert_with(|| {
                            Error::invalid(format!("layer {}: {e}", layers[li]))
                        });
                    }
                }
            }
            row.push(match failure {
                Some(e) => Err(e),
                None => Ok(scores),
            });
        }
        out.push(row);
    }
    Ok(out)
}

fn by_type(scores: &CellScores) -> BTreeMap<u8, Vec<f64>> {
    let mut m: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for (&(t, _), &s) in scores {
        m.entry(t).or_default().push(s);
    }
    m
}

/// Runs the protocol for one configuration.
pub fn run_meta_protocol(
    refs: &[NamedImage],
    anchor: &[NamedImage],
    config: &MetricConfig,
    provider: &dyn FeatureProvider,
    options: &ProtocolOptions,
) -> Result<MetaResult> {
    let anchor = resolve_anchor(config.anchor_mode, refs, anchor)?;
    let mut m = score_matrix(
        provider,
        &[config.layer_index],
        &[config.gamma_policy],
        config.kernel,
        refs,
        anchor,
        options,
    )?;
    let scores = m.remove(0).remove(0)?;
    Ok(summarize(config.clone(), &by_type(&scores)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedConfig {
    pub config: MetricConfig,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    /// Best first.
    pub ranked: Vec<MetaResult>,
    pub failed: Vec<FailedConfig>,
}

impl GridReport {
    pub fn config_count(&self) -> usize {
        self.ranked.len() + self.failed.len()
    }
}

/// Number of configurations a grid evaluates.
pub fn grid_size(layer_counts: &[usize], policies: usize) -> usize {
    layer_counts.iter().sum::<usize>() * policies
}

/// Total order used for ranking: `avg_rho` descending, `avg_tau`
/// descending, then backbone, layer and γ value ascending.
pub fn rank_order(a: &MetaResult, b: &MetaResult) -> Ordering {
    let key = |v: Option<f64>| v.unwrap_or(f64::NEG_INFINITY);
    key(b.avg_rho)
        .total_cmp(&key(a.avg_rho))
        .then(key(b.avg_tau).total_cmp(&key(a.avg_tau)))
        .then(a.config.sort_key_cmp(&b.config))
}

/// Evaluates every (backbone, layer, policy) combination. Configurations
/// whose averages are undefined or whose scoring fails are reported as
/// failures and left out of the ranking.
pub fn grid_search(
    providers: &[&dyn FeatureProvider],
    policies: &[GammaPolicy],
    kernel: KernelKind,
    mode: AnchorMode,
    refs: &[NamedImage],
    anchor: &[NamedImage],
    options: &ProtocolOptions,
) -> Result<GridReport> {
    let anchor = resolve_anchor(mode, refs, anchor)?;
    let mut ranked = Vec::new();
    let mut failed = Vec::new();
    for provider in providers {
        let layers: Vec<usize> = (1..=provider.layer_count()).collect();
        let matrix = score_matrix(*provider, &layers, policies, kernel, refs, anchor, options);
        for (li, &layer) in layers.iter().enumerate() {
            for (pi, policy) in policies.iter().enumerate() {
                let config = MetricConfig {
                    backbone_id: provider.backbone_id().to_string(),
                    layer_index: layer,
                    kernel,
                    gamma_policy: *policy,
                    anchor_mode: mode,
                };
                let outcome = match &matrix {
                    Ok(m) => match &m[li][pi] {
                        Ok(scores) => Ok(summarize(config.clone(), &by_type(scores))),
                        Err(e) => Err(e.to_string()),
                    },
                    Err(e) => Err(e.to_string()),
                };
                match outcome {
                    Ok(r) if r.avg_rho.is_some() => ranked.push(r),
                    Ok(_) => failed.push(FailedConfig {
                        config,
                        error: "no degradation type has a defined correlation".into(),
                    }),
                    Err(error) => failed.push(FailedConfig { config, error }),
                }
            }
        }
    }
    ranked.sort_by(rank_order);
    failed.sort_by(|a, b| a.config.sort_key_cmp(&b.config));
    Ok(GridReport { ranked, failed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> MetricConfig {
        MetricConfig {
            backbone_id: "stub".into(),
            layer_index: 1,
            kernel: KernelKind::Rbf,
            gamma_policy: GammaPolicy::MedianMultiple { factor: 1.0 },
            anchor_mode: AnchorMode::Reference,
        }
    }

    #[test]
    fn oracle_stub_scores_perfectly() {
        let scores: BTreeMap<u8, Vec<f64>> =
            (1..=20).map(|t| (t, (1..=10).map(f64::from).collect())).collect();
        let r = summarize(config(), &scores);
        assert_eq!(r.avg_rho, Some(1.0));
        assert_eq!(r.avg_tau, Some(1.0));
        assert_eq!(r.per_type.len(), 20);
    }

    #[test]
    fn constant_stub_is_undefined_and_excluded() {
        let mut scores = BTreeMap::new();
        scores.insert(1u8, vec![0.5; 10]);
        scores.insert(2u8, (1..=10).map(|l| -f64::from(l)).collect());
        let r = summarize(config(), &scores);
        assert!(matches!(
            r.per_type[&1].correlation(),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert_eq!(r.avg_rho, Some(-1.0));
    }

    #[test]
    fn ranking_is_total() {
        let mk = |b: &str, l: usize, f: f64, rho: f64, tau: f64| MetaResult {
            config: MetricConfig {
                backbone_id: b.into(),
                layer_index: l,
                gamma_policy: GammaPolicy::MedianMultiple { factor: f },
                ..config()
            },
            per_type: BTreeMap::new(),
            avg_rho: Some(rho),
            avg_tau: Some(tau),
        };
        let mut v = vec![
            mk("b", 1, 1.0, 0.5, 0.4),
            mk("a", 2, 1.0, 0.5, 0.4),
            mk("a", 1, 2.0, 0.5, 0.4),
            mk("a", 1, 0.5, 0.5, 0.4),
            mk("z", 9, 1.0, 0.5, 0.6),
            mk("z", 9, 1.0, 0.9, 0.1),
        ];
        v.sort_by(rank_order);
        let keys: Vec<_> = v
            .iter()
            .map(|r| (r.config.backbone_id.as_str(), r.config.layer_index, r.config.gamma_policy.value()))
            .collect();
        assert_eq!(
            keys,
            vec![("z", 9, 1.0), ("z", 9, 1.0), ("a", 1, 0.5), ("a", 1, 2.0), ("a", 2, 1.0), ("b", 1, 1.0)]
        );
        assert_eq!(v[0].avg_rho, Some(0.9));
    }

    #[test]
    fn grid_arithmetic() {
        assert_eq!(grid_size(&[17, 16, 14, 18, 13], 10), 780);
        assert_eq!(grid_size(&[2], 10), 20);
    }

    #[test]
    fn anchor_mode_checks() {
        let im = |id: &str| NamedImage::new(id, ImageBuffer::filled(4, 4, [0.5; 3]).unwrap());
        let refs = vec![im("a"), im("b")];
        let other = vec![im("c"), im("d")];
        assert!(resolve_anchor(AnchorMode::Reference, &refs, &[]).is_ok());
        assert!(resolve_anchor(AnchorMode::Reference, &refs, &other).is_err());
        assert!(resolve_anchor(AnchorMode::Independent, &refs, &other).is_ok());
        assert!(resolve_anchor(AnchorMode::Independent, &refs, &[im("a")]).is_err());
        assert!(resolve_anchor(AnchorMode::Independent, &refs, &[]).is_err());
    }

    #[test]
    fn policy_resolution() {
        assert_eq!(GammaPolicy::MedianMultiple { factor: 2.0 }.resolve(0.25), 0.5);
        assert_eq!(GammaPolicy::Absolute { gamma: 0.005 }.resolve(9.0), 0.005);
        assert_eq!(
            GammaPolicy::Absolute { gamma: 1.0 }.kernel(KernelKind::Polynomial, 1.0).unwrap(),
            KernelSpec::Polynomial
        );
    }
}
