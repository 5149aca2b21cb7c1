//! Grouped-rank experiments, the real-vs-synthetic inversion check and the
//! embedding (CMMD-style) baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchor::AnchorModel;
use crate::error::{Error, Result};
use crate::gram::GramVector;
use crate::kernel::{median_heuristic_gamma, KernelKind, KernelSpec, DEFAULT_MAX_EXACT_PAIRS};
use crate::mmd::{mmd2_unbiased, MmdResult};
use crate::protocol::{score_cell, GammaPolicy};
use crate::rank::{kendall_tau, linear_fit, permutation_p_value, spearman_rho, LinearFit, RankStatistic};

/// Fixed bandwidth of the CLIP-embedding baseline.
pub const CMMD_GAMMA: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingKey {
    Dmos,
    Mos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub rank: usize,
    pub image_ids: Vec<String>,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedDataset {
    pub groups: Vec<Group>,
    pub group_size: usize,
    pub ordering_key: OrderingKey,
    /// `true` when group 0 holds the highest opinion scores.
    pub descending: bool,
}

/// Sorts by opinion score (ties broken by image id) and cuts consecutive
/// chunks of `group_size`. Group 0 holds the lowest scores unless
/// `descending` is set.
pub fn build_ranked_groups(
    scores: &[(String, f64)],
    group_size: usize,
    ordering_key: OrderingKey,
    descending: bool,
) -> Result<GroupedDataset> {
    if group_size == 0 || scores.is_empty() || scores.len() % group_size != 0 {
        return Err(Error::invalid(format!(
            "{} entries cannot be split into groups of {group_size}",
            scores.len()
        )));
    }
    if let Some((id, _)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite opinion score for {id}")));
    }
    let mut sorted: Vec<&(String, f64)> = scores.iter().collect();
    sorted.sort_by(|a, b| {
        let by_score = a.1.total_cmp(&b.1);
        let by_score = if descending { by_score.reverse() } else { by_score };
        by_score.then_with(|| a.0.cmp(&b.0))
    });
    let mut seen = std::collections::BTreeSet::new();
    for (id, _) in &sorted {
        if !seen.insert(id.as_str()) {
            return Err(Error::invalid(format!("duplicate image id {id}")));
        }
    }
    let groups = sorted
        .chunks(group_size)
        .enumerate()
        .map(|(rank, chunk)| Group {
            rank,
            image_ids: chunk.iter().map(|(id, _)| id.clone()).collect(),
            mean_score: chunk.iter().map(|(_, s)| s).sum::<f64>() / group_size as f64,
        })
        .collect();
    Ok(GroupedDataset {
        groups,
        group_size,
        ordering_key,
        descending,
    })
}

/// Supplies Gram vectors for image ids.
pub trait VectorSource: Sync {
    fn vectors(&self, ids: &[String]) -> Result<Vec<GramVector>>;
}

impl<F> VectorSource for F
where
    F: Fn(&[String]) -> Result<Vec<GramVector>> + Sync,
{
    fn vectors(&self, ids: &[String]) -> Result<Vec<GramVector>> {
        self(ids)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub rank: usize,
    pub mean_opinion: f64,
    pub mmd: MmdResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupExperimentResult {
    pub per_group: Vec<GroupScore>,
    /// Correlations of score against group rank.
    pub rho_rank: f64,
    pub tau_rank: f64,
    /// Correlations of score against group-mean opinion score.
    pub rho_opinion: f64,
    pub tau_opinion: f64,
    /// Least squares `score ≈ intercept + slope · mean opinion`.
    pub fit: LinearFit,
    /// Permutation p-value of `rho_opinion`.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupExperimentOptions {
    pub permutations: usize,
    pub seed: u64,
}

impl Default for GroupExperimentOptions {
    fn default() -> Self {
        Self {
            permutations: crate::rank::DEFAULT_PERMUTATIONS,
            seed: 0,
        }
    }
}

pub fn run_group_experiment(
    groups: &GroupedDataset,
    anchor: &AnchorModel,
    kernel: &KernelSpec,
    source: &dyn VectorSource,
    options: &GroupExperimentOptions,
) -> Result<GroupExperimentResult> {
    let per_group: Vec<GroupScore> = groups
        .groups
        .par_iter()
        .map(|g| {
            let wrap = |e: Error| Error::invalid(format!("group {}: {e}", g.rank));
            let vecs = source.vectors(&g.image_ids).map_err(wrap)?;
            Ok(GroupScore {
                rank: g.rank,
                mean_opinion: g.mean_score,
                mmd: score_cell(&vecs, anchor, kernel).map_err(wrap)?,
            })
        })
        .collect::<Result<_>>()?;
    let ranks: Vec<f64> = per_group.iter().map(|g| g.rank as f64).collect();
    let opinion: Vec<f64> = per_group.iter().map(|g| g.mean_opinion).collect();
    let scores: Vec<f64> = per_group.iter().map(|g| g.mmd.mmd2).collect();
    Ok(GroupExperimentResult {
        rho_rank: spearman_rho(&ranks, &scores)?,
        tau_rank: kendall_tau(&ranks, &scores)?,
        rho_opinion: spearman_rho(&opinion, &scores)?,
        tau_opinion: kendall_tau(&opinion, &scores)?,
        fit: linear_fit(&opinion, &scores)?,
        p_value: permutation_p_value(
            &opinion,
            &scores,
            RankStatistic::Spearman,
            options.permutations,
            options.seed,
        )?,
        per_group,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub gamma_policy: GammaPolicy,
    pub score_synthetic: f64,
    pub score_real: f64,
    /// Ratio of the scores clamped at zero; 1 when both clamp to zero.
    pub ratio: f64,
    pub inverted: bool,
}

impl InversionResult {
    pub fn from_scores(gamma_policy: GammaPolicy, score_synthetic: f64, score_real: f64) -> Self {
        let (s, r) = (score_synthetic.max(0.0), score_real.max(0.0));
        let ratio = if s == 0.0 && r == 0.0 { 1.0 } else { s / r };
        Self {
            gamma_policy,
            score_synthetic,
            score_real,
            ratio,
            inverted: ratio < 1.0,
        }
    }
}

/// Scores both evaluation sets under every bandwidth policy.
pub fn run_inversion_experiment(
    anchor: &AnchorModel,
    synthetic: &[GramVector],
    real: &[GramVector],
    kind: KernelKind,
    policies: &[GammaPolicy],
) -> Result<Vec<InversionResult>> {
    policies
        .iter()
        .map(|p| {
            let k = p.kernel(kind, anchor.gamma_med)?;
            let s = score_cell(synthetic, anchor, &k)?.mmd2;
            let r = score_cell(real, anchor, &k)?.mmd2;
            Ok(InversionResult::from_scores(*p, s, r))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gamma", rename_all = "snake_case")]
pub enum EmbeddingGamma {
    Fixed { value: f64 },
    Median { factor: f64 },
}

/// RBF MMD² on raw embeddings: no Gram step, no standardization.
pub fn embedding_mmd_baseline<A, E>(anchor: &[A], eval: &[E], gamma: EmbeddingGamma, seed: u64) -> Result<MmdResult>
where
    A: AsRef<[f64]> + Sync,
    E: AsRef<[f64]> + Sync,
{
    let g = match gamma {
        EmbeddingGamma::Fixed { value } => value,
        EmbeddingGamma::Median { factor } => {
            factor * median_heuristic_gamma(anchor, DEFAULT_MAX_EXACT_PAIRS, seed)?
        }
    };
    mmd2_unbiased(anchor, eval, &KernelSpec::rbf(g)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(v: &[(&str, f64)]) -> Vec<(String, f64)> {
        v.iter().map(|(a, b)| (a.to_string(), *b)).collect()
    }

    #[test]
    fn sort_and_chunk() {
        let g = build_ranked_groups(
            &entries(&[("c", 3.0), ("a", 1.0), ("b", 2.0), ("d", 4.0)]),
            2,
            OrderingKey::Dmos,
            false,
        )
        .unwrap();
        assert_eq!(g.groups[0].image_ids, vec!["a", "b"]);
        assert_eq!(g.groups[1].image_ids, vec!["c", "d"]);
        assert_eq!(g.groups[1].mean_score, 3.5);
        let inv = build_ranked_groups(
            &entries(&[("c", 3.0), ("a", 1.0), ("b", 2.0), ("d", 4.0)]),
            2,
            OrderingKey::Dmos,
            true,
        )
        .unwrap();
        assert_eq!(inv.groups[0].image_ids, vec!["d", "c"]);
    }

    #[test]
    fn tie_break_by_id_and_divisibility() {
        let g = build_ranked_groups(&entries(&[("z", 1.0), ("y", 1.0)]), 1, OrderingKey::Mos, false).unwrap();
        assert_eq!(g.groups[0].image_ids, vec!["y"]);
        assert!(build_ranked_groups(&entries(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]), 2, OrderingKey::Mos, false)
            .is_err());
        assert!(build_ranked_groups(&entries(&[("a", 1.0), ("a", 2.0)]), 1, OrderingKey::Mos, false).is_err());
    }

    #[test]
    fn inversion_flag_follows_ratio() {
        let p = GammaPolicy::MedianMultiple { factor: 1.0 };
        let r = InversionResult::from_scores(p, 2.57e-9, 2.65e-11);
        assert!(!r.inverted);
        assert!((r.ratio - 96.98).abs() < 0.01);
        let c = InversionResult::from_scores(p, 0.494, 0.517);
        assert!(c.inverted);
        let swapped = InversionResult::from_scores(p, 0.517, 0.494);
        assert!(!swapped.inverted);
        assert!(InversionResult::from_scores(p, 0.3, -0.1).ratio.is_infinite());
        assert!(InversionResult::from_scores(p, -0.3, 0.1).inverted);
        assert_eq!(InversionResult::from_scores(p, -0.3, -0.1).ratio, 1.0);
    }

    #[test]
    fn embedding_baseline_identity_set() {
        let a: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let r = embedding_mmd_baseline(&a, &a, EmbeddingGamma::Fixed { value: CMMD_GAMMA }, 0).unwrap();
        assert!(r.mmd2 <= 0.0 && r.mmd2 > -1.0);
        let m = embedding_mmd_baseline(&a, &a, EmbeddingGamma::Median { factor: 1.0 }, 0).unwrap();
        assert!(m.gamma_used.unwrap() > 0.0);
    }
}
