//! Small numerical helpers shared across modules.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Linear-interpolation percentile of an ascending slice.
///
/// Level `p` in [0, 1] sits at (1-based) rank `1 + p (n - 1)`.
/// Volume-weighted mean price and total volume of `(price, volume)` pairs.
///
/// Accumulated as offsets from the first price, so a flat window returns that
/// price exactly. `None` when the iterator is empty.
pub fn vwap<I: IntoIterator<Item = (f64, f64)>>(trades: I) -> Option<(f64, f64)> {
    let mut it = trades.into_iter();
    let (anchor, v0) = it.next()?;
    let mut offset = CompensatedSum::new();
    let mut volume = CompensatedSum::new();
    volume.add(v0);
    for (p, v) in it {
        offset.add((p - anchor) * v);
        volume.add(v);
    }
    let total = volume.value();
    Some((anchor + offset.value() / total, total))
}

pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let lo = lo.min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Order statistic that minimises the summed pinball loss at `tau`.
///
/// Returns the `ceil(n tau)`-th smallest value (1-based, at least the first).
/// When `n tau` is an integer the minimiser set is an interval and this picks
/// its lower end. The slice is reordered in place.
pub fn pinball_minimizer(values: &mut [f64], tau: f64) -> f64 {
    assert!(!values.is_empty(), "pinball_minimizer on empty slice");
    let n = values.len();
    let rank = ((n as f64 * tau) - 1e-9).ceil().max(1.0) as usize;
    let k = rank.min(n) - 1;
    let (_, v, _) = values.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *v
}

/// Pinball loss of a residual `y - yhat` at level `tau`.
#[inline]
pub fn pinball_residual(residual: f64, tau: f64) -> f64 {
    if residual >= 0.0 {
        tau * residual
    } else {
        (tau - 1.0) * residual
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().copied().collect::<CompensatedSum>().value() / values.len() as f64
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let m = mean(values);
    let ss: CompensatedSum = values.iter().map(|v| (v - m) * (v - m)).collect();
    (ss.value() / values.len() as f64).sqrt()
}

/// SplitMix64 finaliser, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
