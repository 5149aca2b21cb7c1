//! Squared maximum mean discrepancy between an anchor and an evaluation set.
//!
//! Pairwise statistics (squared distances or inner products) are computed
//! once into a [`PairwiseTable`]; any number of kernels of the same kind can
//! then be evaluated against it. Every kernel sum goes through [`ExactSum`],
//! so the estimate is independent of traversal order and thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelKind, KernelSpec};
use crate::sum::ExactSum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdResult {
    pub mmd2: f64,
    pub term_anchor: f64,
    pub term_eval: f64,
    pub term_cross: f64,
    pub n_anchor: usize,
    pub n_eval: usize,
    pub gamma_used: Option<f64>,
}

impl MmdResult {
    /// Report-table variant; the estimator itself may go negative.
    pub fn clamped(&self) -> f64 {
        self.mmd2.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// One thread, row-major.
    #[default]
    Serial,
    /// Rows computed on the rayon pool; the final reduction is still exact
    /// and therefore bit-identical to `Serial`.
    Parallel,
}

/// Pair statistics for one (anchor, eval) pair of sets.
#[derive(Debug, Clone)]
pub struct PairwiseTable {
    kind: KernelKind,
    dim: usize,
    n_anchor: usize,
    n_eval: usize,
    /// strict upper triangle, row-major
    anchor_pairs: Vec<f64>,
    anchor_diag: Vec<f64>,
    eval_pairs: Vec<f64>,
    eval_diag: Vec<f64>,
    /// `n_anchor × n_eval`
    cross: Vec<f64>,
}

fn check_set<V: AsRef<[f64]>>(set: &[V], dim: usize) -> Result<()> {
    for v in set {
        Error::check_dim(dim, v.as_ref().len())?;
    }
    Ok(())
}

fn upper_pairs<V: AsRef<[f64]> + Sync>(set: &[V], kind: KernelKind, mode: Reduction) -> Vec<f64> {
    let row = |i: usize| -> Vec<f64> {
        let xi = set[i].as_ref();
        set[i + 1..].iter().map(|y| kind.pair_stat(xi, y.as_ref())).collect()
    };
    let rows: Vec<Vec<f64>> = match mode {
        Reduction::Serial => (0..set.len()).map(row).collect(),
        Reduction::Parallel => (0..set.len()).into_par_iter().map(row).collect(),
    };
    rows.concat()
}

fn diag<V: AsRef<[f64]>>(set: &[V], kind: KernelKind) -> Vec<f64> {
    set.iter().map(|v| kind.pair_stat(v.as_ref(), v.as_ref())).collect()
}

impl PairwiseTable {
    pub fn compute<A, E>(anchor: &[A], eval: &[E], kind: KernelKind, mode: Reduction) -> Result<Self>
    where
        A: AsRef<[f64]> + Sync,
        E: AsRef<[f64]> + Sync,
    {
        let first = match (anchor.first(), eval.first()) {
            (Some(a), _) => a.as_ref().len(),
            (None, Some(e)) => e.as_ref().len(),
            (None, None) => return Err(Error::invalid("both sample sets are empty")),
        };
        if first == 0 {
            return Err(Error::invalid("zero-length feature vectors"));
        }
        check_set(anchor, first)?;
        check_set(eval, first)?;
        let cross_row = |i: usize| -> Vec<f64> {
            let xi = anchor[i].as_ref();
            eval.iter().map(|y| kind.pair_stat(xi, y.as_ref())).collect()
        };
        let cross: Vec<Vec<f64>> = match mode {
            Reduction::Serial => (0..anchor.len()).map(cross_row).collect(),
            Reduction::Parallel => (0..anchor.len()).into_par_iter().map(cross_row).collect(),
        };
        Ok(Self {
            kind,
            dim: first,
            n_anchor: anchor.len(),
            n_eval: eval.len(),
            anchor_pairs: upper_pairs(anchor, kind, mode),
            anchor_diag: diag(anchor, kind),
            eval_pairs: upper_pairs(eval, kind, mode),
            eval_diag: diag(eval, kind),
            cross: cross.concat(),
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_kernel(&self, spec: &KernelSpec) -> Result<()> {
        spec.validate()?;
        if spec.kind() != self.kind {
            return Err(Error::invalid(format!(
                "pairwise table holds {} statistics, kernel is {}",
                self.kind,
                spec.kind()
            )));
        }
        Ok(())
    }

    fn kernel_sum(&self, stats: &[f64], spec: &KernelSpec) -> f64 {
        stats
            .iter()
            .map(|&s| spec.from_stat(s, self.dim))
            .collect::<ExactSum>()
            .value()
    }

    /// Unbiased estimator: the two within-set averages exclude `i = i′`.
    pub fn mmd2_unbiased(&self, spec: &KernelSpec) -> Result<MmdResult> {
        self.check_kernel(spec)?;
        for (what, n) in [("anchor set", self.n_anchor), ("evaluation set", self.n_eval)] {
            if n < 2 {
                return Err(Error::InsufficientSamples { what, needed: 2, found: n });
            }
        }
        let na = self.n_anchor as f64;
        let ne = self.n_eval as f64;
        let term_anchor = 2.0 * self.kernel_sum(&self.anchor_pairs, spec) / (na * (na - 1.0));
        let term_eval = 2.0 * self.kernel_sum(&self.eval_pairs, spec) / (ne * (ne - 1.0));
        let term_cross = 2.0 * self.kernel_sum(&self.cross, spec) / (na * ne);
        Ok(MmdResult {
            mmd2: (term_anchor + term_eval) - term_cross,
            term_anchor,
            term_eval,
            term_cross,
            n_anchor: self.n_anchor,
            n_eval: self.n_eval,
            gamma_used: spec.gamma(),
        })
    }

    /// Plug-in (V-statistic) estimator including the diagonal terms.
    pub fn mmd2_biased(&self, spec: &KernelSpec) -> Result<f64> {
        self.check_kernel(spec)?;
        for (what, n) in [("anchor set", self.n_anchor), ("evaluation set", self.n_eval)] {
            if n < 1 {
                return Err(Error::InsufficientSamples { what, needed: 1, found: n });
            }
        }
        let na = self.n_anchor as f64;
        let ne = self.n_eval as f64;
        let within = |pairs: &[f64], diag: &[f64]| {
            let mut s = ExactSum::new();
            for &p in pairs {
                s.add(2.0 * spec.from_stat(p, self.dim));
            }
            for &d in diag {
                s.add(spec.from_stat(d, self.dim));
            }
            s.value()
        };
        let a = within(&self.anchor_pairs, &self.anchor_diag) / (na * na);
        let e = within(&self.eval_pairs, &self.eval_diag) / (ne * ne);
        let c = 2.0 * self.kernel_sum(&self.cross, spec) / (na * ne);
        Ok((a + e) - c)
    }
}

pub fn mmd2_unbiased<A, E>(anchor: &[A], eval: &[E], spec: &KernelSpec) -> Result<MmdResult>
where
    A: AsRef<[f64]> + Sync,
    E: AsRef<[f64]> + Sync,
{
    for (what, n) in [("anchor set", anchor.len()), ("evaluation set", eval.len())] {
        if n < 2 {
            return Err(Error::InsufficientSamples { what, needed: 2, found: n });
        }
    }
    PairwiseTable::compute(anchor, eval, spec.kind(), Reduction::Serial)?.mmd2_unbiased(spec)
}

pub fn mmd2_biased<A, E>(anchor: &[A], eval: &[E], spec: &KernelSpec) -> Result<f64>
where
    A: AsRef<[f64]> + Sync,
    E: AsRef<[f64]> + Sync,
{
    if anchor.is_empty() || eval.is_empty() {
        return Err(Error::invalid("biased MMD needs non-empty sets"));
    }
    PairwiseTable::compute(anchor, eval, spec.kind(), Reduction::Serial)?.mmd2_biased(spec)
}
