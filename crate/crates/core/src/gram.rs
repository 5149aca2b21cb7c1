//! Gram-matrix texture descriptors.
//!
//! An activation tensor is reduced to the channel-by-channel second-moment
//! matrix averaged over spatial positions (CNN) or patch tokens (ViT), then
//! flattened to its upper triangle. The resulting vector length depends only
//! on the channel count, so images of any resolution share one space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sum::exact_dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// `channels × height × width`, channel-major.
    Cnn {
        channels: usize,
        height: usize,
        width: usize,
    },
    /// `count × dim`, token-major (patch tokens only).
    Tokens { count: usize, dim: usize },
}

/// Per-image intermediate features of a backbone layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    layout: Layout,
    values: Vec<f64>,
}

impl ActivationTensor {
    pub fn cnn(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "activation dimensions must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        Error::check_dim(channels * height * width, values.len())?;
        Ok(Self {
            layout: Layout::Cnn {
                channels,
                height,
                width,
            },
            values,
        })
    }

    pub fn tokens(count: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("token activation has no patch tokens"));
        }
        if dim == 0 {
            return Err(Error::invalid("token dimension must be >= 1"));
        }
        Error::check_dim(count * dim, values.len())?;
        Ok(Self {
            layout: Layout::Tokens { count, dim },
            values,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Channel / embedding dimension `d`.
    pub fn dim(&self) -> usize {
        match self.layout {
            Layout::Cnn { channels, .. } => channels,
            Layout::Tokens { dim, .. } => dim,
        }
    }

    /// Number of averaged positions: `H·W` or `N`.
    pub fn positions(&self) -> usize {
        match self.layout {
            Layout::Cnn { height, width, .. } => height * width,
            Layout::Tokens { count, .. } => count,
        }
    }

    fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::invalid(format!(
                "non-finite activation value at flat index {i}"
            ))),
        }
    }
}

/// Symmetric `d × d` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    dim: usize,
    values: Vec<f64>,
}

impl GramMatrix {
    pub fn from_rows(dim: usize, values: Vec<f64>) -> Result<Self> {
        Error::check_dim(dim * dim, values.len())?;
        for i in 0..dim {
            for j in i + 1..dim {
                if values[i * dim + j] != values[j * dim + i] {
                    return Err(Error::invalid(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { dim, values })
    }

    /// Rebuilds the full symmetric matrix from its upper triangle.
    pub fn from_upper_tri(v: &GramVector) -> Self {
        let d = v.source_dim;
        let mut values = vec![0.0; d * d];
        let mut k = 0;
        for i in 0..d {
            for j in i..d {
                values[i * d + j] = v.values[k];
                values[j * d + i] = v.values[k];
                k += 1;
            }
        }
        Self { dim: d, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Upper triangle (diagonal included) of a Gram matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramVector {
    source_dim: usize,
    values: Vec<f64>,
}

impl GramVector {
    pub fn new(source_dim: usize, values: Vec<f64>) -> Result<Self> {
        Error::check_dim(packed_len(source_dim), values.len())?;
        Ok(Self { source_dim, values })
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for GramVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// `d(d+1)/2`.
pub fn packed_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Recovers `d` from a packed length, if it is triangular.
pub fn source_dim_for(len: usize) -> Option<usize> {
    let d = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (packed_len(d) == len).then_some(d)
}

/// `rows` is `d` rows of `positions` samples each.
fn second_moments(rows: &[f64], d: usize, positions: usize) -> GramMatrix {
    let n = positions as f64;
    let mut values = vec![0.0; d * d];
    for i in 0..d {
        let ri = &rows[i * positions..(i + 1) * positions];
        for j in i..d {
            let rj = &rows[j * positions..(j + 1) * positions];
            let g = exact_dot(ri, rj) / n;
            values[i * d + j] = g;
            values[j * d + i] = g;
        }
    }
    GramMatrix { dim: d, values }
}

/// `Ḡ = F Fᵀ / (H·W)` over the spatial positions of a CNN activation.
pub fn gram_from_cnn(act: &ActivationTensor) -> Result<GramMatrix> {
    let Layout::Cnn { channels, .. } = act.layout else {
        return Err(Error::invalid("gram_from_cnn requires a CNN-layout activation"));
    };
    act.check_finite()?;
    Ok(second_moments(&act.values, channels, act.positions()))
}

/// `Ḡ = P Pᵀ / N` over patch tokens.
pub fn gram_from_tokens(act: &ActivationTensor) -> Result<GramMatrix> {
    let Layout::Tokens { count, dim } = act.layout else {
        return Err(Error::invalid("gram_from_tokens requires a token-layout activation"));
    };
    act.check_finite()?;
    let mut rows = vec![0.0; count * dim];
    for (n, token) in act.values.chunks_exact(dim).enumerate() {
        for (i, &v) in token.iter().enumerate() {
            rows[i * count + n] = v;
        }
    }
    Ok(second_moments(&rows, dim, count))
}

/// Dispatches on the activation layout.
pub fn gram(act: &ActivationTensor) -> Result<GramMatrix> {
    match act.layout {
        Layout::Cnn { .. } => gram_from_cnn(act),
        Layout::Tokens { .. } => gram_from_tokens(act),
    }
}

/// Row-major traversal of `(i, j)` with `j >= i`.
pub fn vectorize_upper_tri(g: &GramMatrix) -> GramVector {
    let d = g.dim;
    let mut values = Vec::with_capacity(packed_len(d));
    for i in 0..d {
        values.extend_from_slice(&g.values[i * d + i..(i + 1) * d]);
    }
    GramVector {
        source_dim: d,
        values,
    }
}

/// Activation → Gram → upper-triangle vector.
pub fn gram_vector(act: &ActivationTensor) -> Result<GramVector> {
    gram(act).map(|g| vectorize_upper_tri(&g))
}

pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-8;

/// Per-component affine normalization fitted on anchor vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon_floor: f64,
}

/// Mean and population standard deviation (divisor `N`) per component,
/// with `σ` floored at `epsilon_floor`.
pub fn fit_standardizer<V: AsRef<[f64]>>(anchor: &[V], epsilon_floor: f64) -> Result<Standardizer> {
    if anchor.len() < 2 {
        return Err(Error::InsufficientSamples {
            what: "standardizer fit",
            needed: 2,
            found: anchor.len(),
        });
    }
    if !(epsilon_floor > 0.0 && epsilon_floor.is_finite()) {
        return Err(Error::invalid(format!("epsilon floor must be positive, got {epsilon_floor}")));
    }
    let m = anchor[0].as_ref().len();
    for v in anchor {
        Error::check_dim(m, v.as_ref().len())?;
    }
    let n = anchor.len() as f64;
    let mut mean = vec![0.0; m];
    for v in anchor {
        for (acc, x) in mean.iter_mut().zip(v.as_ref()) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= n);
    let mut var = vec![0.0; m];
    for v in anchor {
        for ((acc, x), mu) in var.iter_mut().zip(v.as_ref()).zip(&mean) {
            let c = x - mu;
            *acc += c * c;
        }
    }
    let std = var
        .into_iter()
        .map(|s| (s / n).sqrt().max(epsilon_floor))
        .collect();
    Ok(Standardizer {
        mean,
        std,
        epsilon_floor,
    })
}

impl Standardizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(v − μ) / σ` componentwise.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.mean.len(), v.len())?;
        Ok(v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, mu), sd)| (x - mu) / sd)
            .collect())
    }

    pub fn apply_all<V: AsRef<[f64]>>(&self, vs: &[V]) -> Result<Vec<Vec<f64>>> {
        vs.iter().map(|v| self.apply(v.as_ref())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cnn(d: usize, h: usize, w: usize, v: &[f64]) -> ActivationTensor {
        ActivationTensor::cnn(d, h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn constant_channel() {
        let g = gram_from_cnn(&cnn(1, 2, 2, &[2.0; 4])).unwrap();
        assert_eq!(g.values(), &[4.0]);
    }

    #[test]
    fn orthogonal_one_hot_columns() {
        // F columns (1,0) and (0,1): rows are [1,0] and [0,1]
        let g = gram_from_cnn(&cnn(2, 1, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(g.values(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn mixed_columns() {
        // F columns (1,1) and (2,0)
        let g = gram_from_cnn(&cnn(2, 1, 2, &[1.0, 2.0, 1.0, 0.0])).unwrap();
        assert_eq!(g.values(), &[2.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn token_examples() {
        let g = gram_from_tokens(&ActivationTensor::tokens(1, 2, vec![3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(g.values(), &[9.0, 12.0, 12.0, 16.0]);
        let g = gram_from_tokens(&ActivationTensor::tokens(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(g.values(), &[0.5, 0.0, 0.0, 0.5]);
        let g = gram_from_tokens(&ActivationTensor::tokens(2, 2, vec![1.0, 1.0, 2.0, 0.0]).unwrap())
            .unwrap();
        assert_eq!(g.values(), &[2.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            gram_from_cnn(&cnn(1, 1, 2, &[1.0, f64::NAN])),
            Err(Error::InvalidInput(_))
        ));
        assert!(ActivationTensor::tokens(0, 3, vec![]).is_err());
        assert!(ActivationTensor::cnn(2, 2, 2, vec![0.0; 7]).is_err());
        let tok = ActivationTensor::tokens(1, 1, vec![1.0]).unwrap();
        assert!(gram_from_cnn(&tok).is_err());
    }

    #[test]
    fn upper_tri_examples() {
        let g = GramMatrix::from_rows(2, vec![1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(vectorize_upper_tri(&g).values(), &[1.0, 2.0, 3.0]);
        let id = GramMatrix::from_rows(3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let v = vectorize_upper_tri(&id);
        assert_eq!(v.values(), &[1., 0., 0., 1., 0., 1.]);
        assert_eq!(v.source_dim(), 3);
        let one = GramMatrix::from_rows(1, vec![4.0]).unwrap();
        assert_eq!(vectorize_upper_tri(&one).values(), &[4.0]);
        assert!(GramMatrix::from_rows(2, vec![1.0, 2.0, 2.5, 3.0]).is_err());
    }

    #[test]
    fn packed_len_inverse() {
        for d in 1..200 {
            assert_eq!(source_dim_for(packed_len(d)), Some(d));
        }
        assert_eq!(source_dim_for(4), None);
    }

    #[test]
    fn standardizer_population_std() {
        let s = fit_standardizer(&[vec![1.0, 2.0], vec![3.0, 4.0]], 1e-8).unwrap();
        assert_eq!(s.mean, vec![2.0, 3.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.apply(&[3.0, 4.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(s.apply(&[2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn standardizer_floor_and_constant_component() {
        let s = fit_standardizer(&[vec![1.0, 5.0], vec![1.0, 5.0]], 1e-8).unwrap();
        assert_eq!(s.std, vec![1e-8, 1e-8]);
        let vs = [vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 4.0]];
        let s = fit_standardizer(&vs, DEFAULT_EPSILON_FLOOR).unwrap();
        for v in &vs {
            assert_eq!(s.apply(v).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn standardizer_componentwise_division() {
        let s = Standardizer {
            mean: vec![0.0, 0.0],
            std: vec![2.0, 4.0],
            epsilon_floor: 1e-8,
        };
        assert_eq!(s.apply(&[2.0, 4.0]).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(s.apply(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn standardizer_errors() {
        assert!(matches!(
            fit_standardizer(&[vec![1.0]], 1e-8),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            fit_standardizer(&[vec![1.0], vec![1.0, 2.0]], 1e-8),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
