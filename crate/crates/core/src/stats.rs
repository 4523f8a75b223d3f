//! Monte-Carlo bookkeeping: running moments, per-entry matrix means and the
//! k-sigma band test used throughout the verification suites.

use crate::DenseMatrix;

/// Welford accumulator for a scalar.
#[derive(Debug, Clone, Default)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (0 for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Entry-wise Welford accumulator over equally shaped matrices.
#[derive(Debug, Clone)]
pub struct MatrixStats {
    rows: usize,
    cols: usize,
    entries: Vec<RunningStats>,
}

impl MatrixStats {
    pub fn new(rows: usize, cols: usize) -> Self {
        MatrixStats { rows, cols, entries: vec![RunningStats::new(); rows * cols] }
    }

    pub fn push(&mut self, m: &DenseMatrix) {
        assert_eq!(m.shape(), (self.rows, self.cols));
        for (s, &v) in self.entries.iter_mut().zip(m.data()) {
            s.push(v);
        }
    }

    pub fn mean(&self) -> DenseMatrix {
        DenseMatrix::new(self.rows, self.cols, self.entries.iter().map(RunningStats::mean).collect())
            .expect("finite means")
    }

    pub fn std_error(&self) -> DenseMatrix {
        DenseMatrix::new(self.rows, self.cols, self.entries.iter().map(RunningStats::std_error).collect())
            .expect("finite standard errors")
    }

    /// Compares the running means against `exact`, see [`BandCheck`].
    pub fn band_check(&self, exact: &DenseMatrix, k_sigma: f64) -> BandCheck {
        BandCheck::new(&self.mean(), &self.std_error(), exact, k_sigma)
    }
}

/// Outcome of checking that every Monte-Carlo mean lies within `k` standard
/// errors of its exact value.
///
/// A floating-point allowance of `1e-9 · max|exact|` is added to the band so
/// that deterministic entries (zero variance) compare up to rounding.
#[derive(Debug, Clone)]
pub struct BandCheck {
    pub k_sigma: f64,
    pub entries: usize,
    pub violations: usize,
    /// Largest `(|mean - exact| - slack)⁺ / se`, where the rounding slack is
    /// `1e-9·max|exact|`; infinite when a zero-variance entry is off.
    pub worst_z: f64,
    /// Largest absolute deviation over all entries.
    pub worst_abs: f64,
}

impl BandCheck {
    pub fn new(mean: &DenseMatrix, se: &DenseMatrix, exact: &DenseMatrix, k_sigma: f64) -> Self {
        assert_eq!(mean.shape(), exact.shape());
        let slack = 1e-9 * exact.max_abs().max(f64::MIN_POSITIVE);
        let mut violations = 0;
        let mut worst_z = 0.0f64;
        let mut worst_abs = 0.0f64;
        for ((&m, &s), &e) in mean.data().iter().zip(se.data()).zip(exact.data()) {
            let dev = (m - e).abs();
            worst_abs = worst_abs.max(dev);
            let excess = (dev - slack).max(0.0);
            if s > 0.0 {
                worst_z = worst_z.max(excess / s);
            } else if excess > 0.0 {
                worst_z = f64::INFINITY;
            }
            if dev.is_nan() || dev > k_sigma * s + slack {
                violations += 1;
            }
        }
        BandCheck { k_sigma, entries: mean.data().len(), violations, worst_z, worst_abs }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Median of a non-empty sample (mean of the two middle values for even sizes).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Population standard deviation (divides by `n`).
pub fn population_std(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, -2.0, 7.5, 3.25];
        let mut s = RunningStats::new();
        xs.iter().for_each(|&x| s.push(x));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        assert!((s.mean() - mean).abs() < 1e-14);
        assert!((s.variance() - var).abs() < 1e-12);
        assert!((s.std_error() - (var / 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn median_and_std() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert_eq!(population_std(&[2.0, 4.0]), Some(1.0));
        assert_eq!(population_std(&[5.0]), Some(0.0));
    }

    #[test]
    fn band_check_flags_deviation() {
        let exact = DenseMatrix::from_rows(&[&[1.0, 2.0]]);
        let mean = DenseMatrix::from_rows(&[&[1.05, 2.0]]);
        let se = DenseMatrix::from_rows(&[&[0.01, 0.0]]);
        let b = BandCheck::new(&mean, &se, &exact, 4.0);
        assert!(!b.passed());
        assert_eq!(b.violations, 1);
        let se = DenseMatrix::from_rows(&[&[0.02, 0.0]]);
        assert!(BandCheck::new(&mean, &se, &exact, 4.0).passed());
    }
}
