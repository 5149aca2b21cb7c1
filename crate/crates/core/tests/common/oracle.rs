//! Scalar reference implementations written straight from the formulas,
//! sharing no code with the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_set(r: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect()
}

pub fn rbf(gamma: f64) -> impl Fn(&[f64], &[f64]) -> f64 {
    move |x, y| {
        let mut s = 0.0;
        for k in 0..x.len() {
            s += (x[k] - y[k]) * (x[k] - y[k]);
        }
        (-gamma * s).exp()
    }
}

pub fn cubic(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..x.len() {
        s += x[k] * y[k];
    }
    (s / x.len() as f64 + 1.0).powi(3)
}

/// Unbiased MMD² by explicit double sums that skip the diagonals.
pub fn mmd2_unbiased<K: Fn(&[f64], &[f64]) -> f64>(a: &[Vec<f64>], e: &[Vec<f64>], k: K) -> f64 {
    let (n, m) = (a.len(), e.len());
    let mut saa = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                saa += k(&a[i], &a[j]);
            }
        }
    }
    let mut see = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                see += k(&e[i], &e[j]);
            }
        }
    }
    let mut sae = 0.0;
    for ai in a {
        for ej in e {
            sae += k(ai, ej);
        }
    }
    saa / (n * (n - 1)) as f64 + see / (m * (m - 1)) as f64 - 2.0 * sae / (n * m) as f64
}

/// `G[i][j] = Σ_{y,x} F[i,y,x]·F[j,y,x] / (H·W)` on channel-major values.
pub fn gram_cnn(values: &[f64], c: usize, h: usize, w: usize) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in 0..c {
            let mut s = 0.0;
            for y in 0..h {
                for x in 0..w {
                    s += values[(i * h + y) * w + x] * values[(j * h + y) * w + x];
                }
            }
            g[i][j] = s / (h * w) as f64;
        }
    }
    g
}

/// `G[i][j] = Σ_t P[t,i]·P[t,j] / N` on token-major values.
pub fn gram_tokens(values: &[f64], n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for t in 0..n {
                s += values[t * d + i] * values[t * d + j];
            }
            g[i][j] = s / n as f64;
        }
    }
    g
}

/// Twice the average rank, as an integer: `2·#{less} + #{equal} + 1`.
fn doubled_ranks(xs: &[f64]) -> Vec<i64> {
    xs.iter()
        .map(|&v| {
            let less = xs.iter().filter(|&&u| u < v).count() as i64;
            let equal = xs.iter().filter(|&&u| u == v).count() as i64;
            2 * less + equal + 1
        })
        .collect()
}

/// Spearman's ρ from integer sums of centred doubled ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as i64;
    let (rx, ry) = (doubled_ranks(xs), doubled_ranks(ys));
    let (mut sxy, mut sxx, mut syy) = (0i64, 0i64, 0i64);
    for k in 0..xs.len() {
        let (dx, dy) = (rx[k] - (n + 1), ry[k] - (n + 1));
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy as f64 / ((sxx * syy) as f64).sqrt()
}

/// Kendall's τ-b by counting all pairs.
pub fn kendall(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let sx = xs[i].partial_cmp(&xs[j]).unwrap();
            let sy = ys[i].partial_cmp(&ys[j]).unwrap();
            if sx.is_eq() && sy.is_eq() {
                continue;
            } else if sx.is_eq() {
                tx += 1;
            } else if sy.is_eq() {
                ty += 1;
            } else if sx == sy {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    let (dx, dy) = (conc + disc + ty, conc + disc + tx);
    (conc - disc) as f64 / ((dx * dy) as f64).sqrt()
}

/// Every permutation of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Rows of the published severity table: `(type, tag, cells)` where each
/// of the ten cells holds one or two parameter values.
pub fn severity_fixture() -> Vec<(u8, String, Vec<Vec<f64>>)> {
    include_str!("../fixtures/severity_table.txt")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let cells = f[2..]
                .iter()
                .map(|c| c.split('/').map(|v| v.parse::<f64>().unwrap()).collect())
                .collect();
            (f[0].parse().unwrap(), f[1].to_string(), cells)
        })
        .collect()
}
