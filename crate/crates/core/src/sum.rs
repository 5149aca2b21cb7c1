//! Correctly rounded floating-point summation.
//!
//! Shewchuk's non-overlapping partials (the algorithm behind Python's
//! `math.fsum`). The rounded total does not depend on the order in which
//! terms are added, which makes kernel sums bit-reproducible regardless of
//! traversal order or how work was split across threads.
//! [`FixedAccumulator`] gives the same rounded result faster on long
//! streams such as Gram inner products.

#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
    // Non-finite terms bypass the partials.
    special: f64,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        if !x.is_finite() {
            self.special += x;
            return;
        }
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    /// Folds another accumulator into this one without losing precision.
    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
        self.special += other.special;
    }

    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Round-half-even correction when the remainder sits exactly on a tie.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

impl Extend<f64> for ExactSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

pub fn exact_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<ExactSum>().value()
}

const BINS: usize = 66;
const CARRY_EVERY: u64 = 1 << 40;

/// Fixed-point accumulator spanning the whole `f64` range, for long sums
/// where [`ExactSum`]'s partials would be slow. Bin `k` counts units of
/// `2^(32k − 1075)`; each term lands in one `i128` bin. The rounded total is
/// the same as [`ExactSum`]'s.
#[derive(Debug, Clone)]
pub struct FixedAccumulator {
    bins: [i128; BINS],
    lo: usize,
    hi: usize,
    count: u64,
    special: f64,
}

impl Default for FixedAccumulator {
    fn default() -> Self {
        Self {
            bins: [0; BINS],
            lo: BINS,
            hi: 0,
            count: 0,
            special: 0.0,
        }
    }
}

impl FixedAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        if !x.is_finite() {
            self.special += x;
            return;
        }
        let bits = x.to_bits();
        let field = ((bits >> 52) & 0x7ff) as usize;
        let frac = bits & ((1 << 52) - 1);
        let (mant, e) = if field == 0 { (frac, 1) } else { (frac | (1 << 52), field) };
        if mant == 0 {
            return;
        }
        let (k, shift) = (e / 32, e % 32);
        let v = i128::from(mant) << shift;
        self.bins[k] += if bits >> 63 == 1 { -v } else { v };
        self.lo = self.lo.min(k);
        self.hi = self.hi.max(k);
        self.count += 1;
        if self.count % CARRY_EVERY == 0 {
            self.carry();
        }
    }

    fn carry(&mut self) {
        for k in self.lo..BINS - 1 {
            let c = self.bins[k] >> 32;
            self.bins[k] -= c << 32;
            self.bins[k + 1] += c;
            if c != 0 {
                self.hi = self.hi.max(k + 1);
            }
        }
    }

    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        let mut s = ExactSum::new();
        for k in self.lo..=self.hi.min(BINS - 1) {
            let v = self.bins[k];
            let chunks = [v & ((1 << 42) - 1), (v >> 42) & ((1 << 42) - 1), v >> 84];
            for (j, c) in chunks.into_iter().enumerate() {
                if c != 0 {
                    let scale = 32 * k as i32 - 1075 + 42 * j as i32;
                    s.add(c as f64 * pow2(scale));
                }
            }
        }
        s.value()
    }
}

// 2^p assembled in two steps so neither factor leaves the normal range early.
fn pow2(p: i32) -> f64 {
    let half = p / 2;
    2f64.powi(half) * 2f64.powi(p - half)
}

/// `Σ a_i·b_i` over individually rounded products, summed exactly; the
/// result does not depend on the order of the pairs.
pub fn exact_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = FixedAccumulator::new();
    for (x, y) in a.iter().zip(b) {
        acc.add(x * y);
    }
    acc.value()
}
