//! Chi-square check that a sample's class distribution matches its
//! population.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::checked_gamma_ur;

use crate::error::{Error, Result};

/// Expected count below which a class is pooled into the "other" bucket.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chi2Result {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    /// Buckets after pooling, as `(observed, expected)`.
    pub buckets: Vec<(f64, f64)>,
}

/// Pearson statistic of `sample_counts` against the counts expected from the
/// population proportions, with the p-value from the regularised upper
/// incomplete gamma function `Q(df / 2, x / 2)`.
///
/// Classes expecting fewer than 5 observations are pooled; if the pool
/// itself stays under 5 it is merged into the smallest remaining bucket.
pub fn chi2_homogeneity(sample_counts: &[u64], population_counts: &[u64]) -> Result<Chi2Result> {
    if sample_counts.is_empty() || sample_counts.len() != population_counts.len() {
        return Err(Error::InvalidInput(format!(
            "{} sample classes vs {} population classes",
            sample_counts.len(),
            population_counts.len()
        )));
    }
    let n: u64 = sample_counts.iter().sum();
    let total: u64 = population_counts.iter().sum();
    if n == 0 || total == 0 {
        return Err(Error::InvalidInput("empty sample or population".into()));
    }
    let mut buckets = Vec::new();
    let mut other = (0.0, 0.0);
    for (&o, &p) in sample_counts.iter().zip(population_counts) {
        let e = n as f64 * p as f64 / total as f64;
        if e < MIN_EXPECTED {
            other.0 += o as f64;
            other.1 += e;
        } else {
            buckets.push((o as f64, e));
        }
    }
    if other.0 > 0.0 || other.1 > 0.0 {
        if other.1 >= MIN_EXPECTED || buckets.is_empty() {
            buckets.push(other);
        } else {
            let smallest = buckets
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .map(|(i, _)| i)
                .expect("non-empty");
            buckets[smallest].0 += other.0;
            buckets[smallest].1 += other.1;
        }
    }
    let df = buckets.len().saturating_sub(1);
    let mut statistic = 0.0;
    for &(o, e) in &buckets {
        if e == 0.0 {
            statistic = if o > 0.0 { f64::INFINITY } else { statistic };
        } else {
            statistic += (o - e) * (o - e) / e;
        }
    }
    let p_value = if df == 0 || statistic == 0.0 {
        1.0
    } else if statistic.is_infinite() {
        0.0
    } else {
        checked_gamma_ur(df as f64 / 2.0, statistic / 2.0)
            .map_err(|e| Error::Numeric(format!("incomplete gamma: {e}")))?
    };
    Ok(Chi2Result {
        statistic,
        degrees_of_freedom: df,
        p_value,
        buckets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportional_sample_has_p_one() {
        let r = chi2_homogeneity(&[10, 20, 30], &[100, 200, 300]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = chi2_homogeneity(&[10, 10], &[1, 1]).unwrap();
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn two_class_closed_form() {
        // 60 vs 40 against 50/50: statistic 4, df 1, p = erfc(sqrt(2)) = 0.0455003
        let r = chi2_homogeneity(&[60, 40], &[1, 1]).unwrap();
        assert!((r.statistic - 4.0).abs() < 1e-12);
        assert!((r.p_value - 0.045_500_263_896_358_4).abs() < 1e-9);
    }

    #[test]
    fn sparse_classes_are_pooled() {
        let r = chi2_homogeneity(&[50, 45, 3, 2], &[500, 450, 30, 20]).unwrap();
        assert_eq!(r.buckets.len(), 3);
        assert_eq!(r.buckets[2], (5.0, 5.0));
        let r = chi2_homogeneity(&[50, 45, 1, 0], &[500, 450, 10, 10]).unwrap();
        assert_eq!(r.buckets.len(), 2);
    }

    #[test]
    fn rejects_empty_input() {
        assert!(chi2_homogeneity(&[], &[]).is_err());
        assert!(chi2_homogeneity(&[0, 0], &[1, 1]).is_err());
    }
}
