//! Kernels and the median-heuristic bandwidth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    Polynomial,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Polynomial => "polynomial",
        })
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" | "gaussian" => Ok(KernelKind::Rbf),
            "poly" | "polynomial" => Ok(KernelKind::Polynomial),
            other => Err(Error::invalid(format!("unknown kernel '{other}'"))),
        }
    }
}

/// A concrete kernel.
///
/// RBF is `exp(−γ‖x−y‖²)` with `γ = 1/(2σ²)`; the polynomial kernel is the
/// KID-style cubic `((1/d)·xᵀy + 1)³` where `d` is the vector length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Rbf { gamma: f64 },
    Polynomial,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(KernelSpec::Rbf { gamma })
        } else {
            Err(Error::invalid(format!("RBF gamma must be finite and positive, got {gamma}")))
        }
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            KernelSpec::Rbf { .. } => KernelKind::Rbf,
            KernelSpec::Polynomial => KernelKind::Polynomial,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            KernelSpec::Rbf { gamma } => Some(gamma),
            KernelSpec::Polynomial => None,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if let KernelSpec::Rbf { gamma } = *self {
            KernelSpec::rbf(gamma)?;
        }
        Ok(())
    }

    /// Kernel value from the pair statistic of [`KernelKind::pair_stat`].
    #[inline]
    pub(crate) fn from_stat(&self, stat: f64, dim: usize) -> f64 {
        match *self {
            KernelSpec::Rbf { gamma } => (-gamma * stat).exp(),
            KernelSpec::Polynomial => {
                let t = stat / dim as f64 + 1.0;
                t * t * t
            }
        }
    }
}

impl KernelKind {
    /// Squared distance for RBF, inner product for the polynomial kernel.
    #[inline]
    pub(crate) fn pair_stat(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelKind::Rbf => squared_distance(x, y),
            KernelKind::Polynomial => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }
}

#[inline]
pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    Error::check_dim(x.len(), y.len())?;
    spec.validate()?;
    Ok(spec.from_stat(spec.kind().pair_stat(x, y), x.len()))
}

/// Default cap on exactly enumerated pairs; 1,000 anchors give ~500k.
pub const DEFAULT_MAX_EXACT_PAIRS: usize = 2_000_000;

/// `γ_med = 1 / (2 · median_{i<j} ‖v_i − v_j‖²)`.
///
/// When the anchor has more than `max_exact_pairs` distinct pairs, the median
/// is taken over `max_exact_pairs` pairs drawn uniformly (with replacement)
/// from a ChaCha8 stream seeded with `seed`.
pub fn median_heuristic_gamma<V: AsRef<[f64]>>(
    anchor: &[V],
    max_exact_pairs: usize,
    seed: u64,
) -> Result<f64> {
    let n = anchor.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            what: "median heuristic",
            needed: 2,
            found: n,
        });
    }
    let dim = anchor[0].as_ref().len();
    for v in anchor {
        Error::check_dim(dim, v.as_ref().len())?;
    }
    let total = n * (n - 1) / 2;
    let mut dists = if total <= max_exact_pairs.max(1) {
        let mut d = Vec::with_capacity(total);
        for i in 0..n {
            for j in i + 1..n {
                d.push(squared_distance(anchor[i].as_ref(), anchor[j].as_ref()));
            }
        }
        d
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..max_exact_pairs)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                squared_distance(anchor[i].as_ref(), anchor[j].as_ref())
            })
            .collect()
    };
    let med = median(&mut dists);
    if !(med > 0.0) {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(1.0 / (2.0 * med))
}

/// Median with the even-length convention `(lo + hi) / 2`.
pub(crate) fn median(xs: &mut [f64]) -> f64 {
    let n = xs.len();
    let mid = n / 2;
    let (lower, hi, _) = xs.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = lower.iter().copied().max_by(f64::total_cmp).unwrap_or(hi);
        (lo + hi) / 2.0
    }
}
