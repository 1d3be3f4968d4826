//! Bootstrap resampling of a test set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of resamples used throughout the evaluation harness.
pub const DEFAULT_RESAMPLES: usize = 100;

/// Re-draws allowed for one resample whose metric is undefined.
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub resamples: usize,
    pub sample_size: usize,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `values`.
    pub std: f64,
    pub half_width_95: f64,
    /// Resamples discarded because the metric was undefined on them.
    pub redraws: usize,
}

impl BootstrapReport {
    pub fn from_values(values: Vec<f64>, sample_size: usize, redraws: usize) -> Self {
        let n = values.len() as f64;
        // Shifting by the first value keeps constant inputs exact.
        let shift = values.first().copied().unwrap_or(0.0);
        let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            resamples: values.len(),
            sample_size,
            values,
            mean,
            std,
            half_width_95: 1.96 * std,
            redraws,
        }
    }
}

/// Produces the index multiset for resample `index`, attempt `attempt`.
pub trait Resampler: Sync {
    fn draw(&self, n: usize, index: usize, attempt: usize) -> Vec<usize>;
}

/// Uniform draws with replacement from a generator seeded with
/// `seed + index`; attempt `a` is the `a`-th draw from that generator.
#[derive(Debug, Clone, Copy)]
pub struct SeededResampler {
    pub seed: u64,
}

impl Resampler for SeededResampler {
    fn draw(&self, n: usize, index: usize, attempt: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(index as u64));
        let mut out = Vec::new();
        for _ in 0..=attempt {
            out = (0..n).map(|_| rng.random_range(0..n)).collect();
        }
        out
    }
}

pub fn bootstrap<F>(n: usize, resamples: usize, seed: u64, metric: F) -> Result<BootstrapReport>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    bootstrap_with(&SeededResampler { seed }, n, resamples, metric)
}

/// Evaluates `metric` on `resamples` index multisets of size `n`. A resample
/// on which the metric is undefined ([`Error::Metric`]) is re-drawn; any
/// other error aborts.
pub fn bootstrap_with<R, F>(
    resampler: &R,
    n: usize,
    resamples: usize,
    metric: F,
) -> Result<BootstrapReport>
where
    R: Resampler,
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidInput("cannot bootstrap an empty test set".into()));
    }
    if resamples == 0 {
        return Err(Error::Config("bootstrap needs at least one resample".into()));
    }
    let results: Vec<(f64, usize)> = (0..resamples)
        .into_par_iter()
        .map(|index| {
            for attempt in 0..=MAX_REDRAWS {
                let sample = resampler.draw(n, index, attempt);
                match metric(&sample) {
                    Ok(v) => return Ok((v, attempt)),
                    Err(Error::Metric(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Metric(format!(
                "resample {index} undefined after {MAX_REDRAWS} re-draws"
            )))
        })
        .collect::<Result<_>>()?;
    let redraws = results.iter().map(|r| r.1).sum();
    if redraws > 0 {
        log::info!("bootstrap re-drew {redraws} degenerate resamples");
    }
    Ok(BootstrapReport::from_values(
        results.into_iter().map(|r| r.0).collect(),
        n,
        redraws,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Identity;

    impl Resampler for Identity {
        fn draw(&self, n: usize, _: usize, _: usize) -> Vec<usize> {
            (0..n).collect()
        }
    }

    #[test]
    fn constant_metric_has_zero_spread() {
        let r = bootstrap(10, 100, 1, |_| Ok(0.7)).unwrap();
        assert_eq!(r.values.len(), 100);
        assert_eq!(r.std, 0.0);
        assert_eq!(r.mean, 0.7);
    }

    #[test]
    fn identity_resample_reproduces_plain_metric() {
        let data = [1.0, 0.0, 1.0, 1.0];
        let mean = |idx: &[usize]| Ok(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64);
        let r = bootstrap_with(&Identity, 4, 1, mean).unwrap();
        assert_eq!(r.values, vec![0.75]);
    }

    #[test]
    fn same_seed_same_report() {
        let f = |idx: &[usize]| Ok(idx.iter().sum::<usize>() as f64);
        assert_eq!(bootstrap(7, 50, 9, f).unwrap(), bootstrap(7, 50, 9, f).unwrap());
        assert_ne!(bootstrap(7, 50, 9, f).unwrap(), bootstrap(7, 50, 10, f).unwrap());
    }

    #[test]
    fn undefined_resamples_are_redrawn() {
        // index 0 must be present; many draws of size 3 miss it.
        let r = bootstrap(3, 100, 4, |idx| {
            if idx.contains(&0) {
                Ok(1.0)
            } else {
                Err(Error::Metric("missing".into()))
            }
        })
        .unwrap();
        assert_eq!(r.values, vec![1.0; 100]);
        assert!(r.redraws > 0);
    }

    #[test]
    fn population_std() {
        let r = BootstrapReport::from_values(vec![1.0, 3.0], 2, 0);
        assert_eq!((r.mean, r.std, r.half_width_95), (2.0, 1.0, 1.96));
    }
}
