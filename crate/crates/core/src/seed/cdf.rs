//! Cumulative histogram matching against the standard normal.

use statrs::function::erf::{erfc, erfc_inv};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Empirical CDF of one independent component.
///
/// Stores the sorted sample values; sample `i` (0-based) sits at CDF level
/// `(i + 0.5) / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfTable {
    values: Vec<f64>,
}

impl CdfTable {
    /// Builds a table from raw samples. Panics on an empty or non-finite sample.
    pub fn fit(samples: impl IntoIterator<Item = f64>) -> Self {
        let mut values: Vec<f64> = samples.into_iter().collect();
        assert!(!values.is_empty(), "CDF table needs at least one sample");
        assert!(values.iter().all(|v| v.is_finite()), "CDF table samples must be finite");
        values.sort_by(f64::total_cmp);
        Self { values }
    }

    pub(crate) fn from_sorted(values: Vec<f64>) -> Option<Self> {
        let ok = !values.is_empty() && values.iter().all(|v| v.is_finite()) && values.windows(2).all(|w| w[0] <= w[1]);
        ok.then_some(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn level(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.values.len() as f64
    }

    fn p_min(&self) -> f64 {
        self.level(0)
    }

    fn p_max(&self) -> f64 {
        self.level(self.values.len() - 1)
    }

    /// Empirical CDF at `v`, linearly interpolated between table entries and
    /// clamped to `[1/(2n), 1 - 1/(2n)]`. Tied entries share their mid-rank
    /// level.
    pub fn cdf(&self, v: f64) -> f64 {
        let lo = self.values.partition_point(|&x| x < v);
        let hi_excl = self.values.partition_point(|&x| x <= v);
        if lo < hi_excl {
            let mid = (lo + hi_excl - 1) as f64 / 2.0;
            return (mid + 0.5) / self.values.len() as f64;
        }
        if lo == 0 {
            return self.p_min();
        }
        if lo == self.values.len() {
            return self.p_max();
        }
        let (a, b) = (self.values[lo - 1], self.values[lo]);
        let t = (v - a) / (b - a);
        self.level(lo - 1) + t * (self.level(lo) - self.level(lo - 1))
    }

    /// Inverse of [`cdf`](Self::cdf): the value at CDF level `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.values.len();
        let p = p.clamp(self.p_min(), self.p_max());
        let pos = (p * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 1);
        if i + 1 >= n {
            return self.values[n - 1];
        }
        let frac = pos - i as f64;
        let (a, b) = (self.values[i], self.values[i + 1]);
        if a == b {
            a
        } else {
            a + frac * (b - a)
        }
    }

    /// Maps a component value to a standard-normal value.
    pub fn gaussianize(&self, v: f64) -> f64 {
        normal_quantile(self.cdf(v))
    }

    /// Maps a standard-normal value back into the sample distribution.
    pub fn degaussianize(&self, g: f64) -> f64 {
        self.quantile(normal_cdf(g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_samples(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn normal_functions_invert() {
        for &p in &[1e-6, 0.001, 0.1, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-6] {
            let err = (normal_cdf(normal_quantile(p)) - p).abs();
            assert!(err < 1e-9 * p.min(1.0 - p), "p = {p}: error {err:e}");
        }
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn gaussianize_standard_normal_is_near_identity() {
        let table = CdfTable::fit(normal_samples(5000, 1));
        let lo = normal_quantile(0.01);
        let hi = normal_quantile(0.99);
        let mut worst = 0.0f64;
        for i in 0..=400 {
            let v = lo + (hi - lo) * i as f64 / 400.0;
            worst = worst.max((table.gaussianize(v) - v).abs());
        }
        assert!(worst <= 0.1, "max deviation {worst}");
    }

    #[test]
    fn zero_maps_to_median() {
        let table = CdfTable::fit([5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(table.degaussianize(0.0), 3.0);
        let even = CdfTable::fit([1.0, 2.0, 3.0, 4.0]);
        assert!((even.degaussianize(0.0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn constant_table() {
        let table = CdfTable::fit([0.7; 9]);
        for g in [-10.0, -1.0, 0.0, 0.3, 8.0] {
            assert_eq!(table.degaussianize(g), 0.7);
        }
        assert_eq!(table.gaussianize(0.7), 0.0);
    }

    #[test]
    fn in_sample_round_trip() {
        let samples = normal_samples(1000, 2);
        let table = CdfTable::fit(samples.iter().copied());
        for &v in &samples {
            assert!((table.degaussianize(table.gaussianize(v)) - v).abs() < 1e-9);
        }
        // With ties.
        let tied = CdfTable::fit([1.0, 1.0, 2.0, 2.0, 2.0, 3.0]);
        for v in [1.0, 2.0, 3.0, 1.5, 2.5] {
            assert!((tied.degaussianize(tied.gaussianize(v)) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn tails_are_clamped() {
        let table = CdfTable::fit([0.0, 1.0, 2.0, 3.0]);
        assert_eq!(table.gaussianize(-100.0), normal_quantile(0.125));
        assert_eq!(table.gaussianize(100.0), normal_quantile(0.875));
        assert_eq!(table.degaussianize(-40.0), 0.0);
        assert_eq!(table.degaussianize(40.0), 3.0);
        assert!(table.gaussianize(-1e300).is_finite());
    }

    proptest::proptest! {
        #[test]
        fn degaussianize_is_monotone(seed in 0u64..200, a in -8.0f64..8.0, b in -8.0f64..8.0) {
            let table = CdfTable::fit(normal_samples(50, seed).into_iter().map(|v| v.round()));
            let (g1, g2) = if a < b { (a, b) } else { (b, a) };
            proptest::prop_assert!(table.degaussianize(g1) <= table.degaussianize(g2));
            proptest::prop_assert!(table.gaussianize(g1) <= table.gaussianize(g2));
        }
    }
}
