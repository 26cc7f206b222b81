//! Histograms and moment summaries shared by the FPT and shortest-path outputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("histogram of an empty sample")]
    EmptyInput,
    #[error("bin width must be positive and finite, got {0}")]
    InvalidBinWidth(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Left-closed, right-open bins of width `bin_width`, aligned so the first
/// edge is `floor(min / bin_width) * bin_width`.
pub fn histogram(samples: &[f64], bin_width: f64) -> Result<Histogram, StatsError> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(StatsError::InvalidBinWidth(bin_width));
    }
    if samples.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let bin_of = |x: f64| (x / bin_width).floor() as i64;
    let (lo, hi) = samples
        .iter()
        .fold((i64::MAX, i64::MIN), |(lo, hi), &x| (lo.min(bin_of(x)), hi.max(bin_of(x))));
    let nbins = (hi - lo + 1) as usize;
    let mut counts = vec![0u64; nbins];
    for &x in samples {
        counts[(bin_of(x) - lo) as usize] += 1;
    }
    let edges = (0..=nbins).map(|i| (lo + i as i64) as f64 * bin_width).collect();
    Ok(Histogram { edges, counts })
}

/// Count, mean and population standard deviation of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            n,
            mean,
            std: var.sqrt(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn small_histograms() {
        let h = histogram(&[1.0, 1.0, 2.0], 1.0).unwrap();
        assert_eq!(h.edges, vec![1.0, 2.0, 3.0]);
        assert_eq!(h.counts, vec![2, 1]);

        let h = histogram(&[0.5], 1.0).unwrap();
        assert_eq!(h.edges, vec![0.0, 1.0]);
        assert_eq!(h.counts, vec![1]);

        let h = histogram(&[-0.5, 4.9, 5.0], 5.0).unwrap();
        assert_eq!(h.edges, vec![-5.0, 0.0, 5.0, 10.0]);
        assert_eq!(h.counts, vec![1, 1, 1]);
    }

    #[test]
    fn histogram_errors() {
        assert_eq!(histogram(&[], 1.0), Err(StatsError::EmptyInput));
        assert_eq!(histogram(&[1.0], 0.0), Err(StatsError::InvalidBinWidth(0.0)));
    }

    #[test]
    fn uniform_counts_concentrate() {
        // Binomial(10^4, 0.1): sd = 30, so +-150 is a 5-sigma band
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() * 10.0).collect();
        let h = histogram(&xs, 1.0).unwrap();
        assert_eq!(h.counts.len(), 10);
        for c in &h.counts {
            assert!((*c as i64 - 1000).abs() <= 150, "count {c}");
        }
        assert_eq!(h.total(), 10_000);
    }

    #[test]
    fn moments() {
        let m = Moments::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.n, 4);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - 1.25f64.sqrt()).abs() < 1e-15);
        assert!(Moments::of(&[]).mean.is_nan());
    }

    proptest::proptest! {
        #[test]
        fn counts_sum_to_sample_size(xs in proptest::collection::vec(-1e3f64..1e3, 1..200), w in 0.1f64..50.0) {
            let h = histogram(&xs, w).unwrap();
            proptest::prop_assert_eq!(h.total() as usize, xs.len());
            proptest::prop_assert_eq!(h.edges.len(), h.counts.len() + 1);
            for x in &xs {
                proptest::prop_assert!(*x >= h.edges[0] && *x < *h.edges.last().unwrap());
            }
        }
    }
}
