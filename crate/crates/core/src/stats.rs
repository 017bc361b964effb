//! Correlation with a two-tailed significance test.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Sample Pearson correlation and its two-tailed p-value.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pearson correlation of `x` and `y`. Returns `Ok(None)` when either series
/// has zero variance, since the coefficient is undefined there.
pub fn pearson_with_p(x: &[f64], y: &[f64]) -> Result<Option<Correlation>> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("series lengths differ: {} vs {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 samples, got {n}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Some(Correlation { r, p_value: correlation_p_value(r, n), n }))
}

/// Two-tailed p-value of `t = r √((n-2)/(1-r²))` under Student-t with `n-2` dof.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let dof = (n - 2) as f64;
    let t = r.abs() * (dof / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    (2.0 * dist.sf(t)).min(1.0)
}

/// Histogram of `values` over `bins` equal-width bins spanning their range.
/// Returns `(lower_edge, count)` per bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for &v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (lo + i as f64 * width, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_line() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = pearson_with_p(&x, &y).unwrap().unwrap();
        assert!((c.r - 1.0).abs() < 1e-12);
        assert!(c.p_value < 1e-12);
    }

    #[test]
    fn matches_reference_implementation() {
        // Reference values from scipy.stats.pearsonr on the same data.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let y = [2.0, 1.0, 4.0, 3.0, 7.0, 8.0, 5.0, 9.0];
        let c = pearson_with_p(&x, &y).unwrap().unwrap();
        assert!((c.r - 0.854670717992912).abs() < 1e-12);
        assert!((c.p_value - 0.006861515291359663).abs() < 1e-10);
    }

    #[test]
    fn small_correlation_on_large_sample() {
        let p = correlation_p_value(0.00882, 64100);
        assert!((p - 0.025545942369059754).abs() < 1e-10);
    }

    #[test]
    fn shuffled_series_are_nearly_uncorrelated() {
        use rand::seq::SliceRandom;
        let mut rng = crate::rng::seeded(9);
        let x: Vec<f64> = (0..5000).map(|i| i as f64).collect();
        let mut y = x.clone();
        y.shuffle(&mut rng);
        let c = pearson_with_p(&x, &y).unwrap().unwrap();
        assert!(c.r.abs() < 0.05);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        assert_eq!(pearson_with_p(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), None);
        assert!(pearson_with_p(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(pearson_with_p(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn histogram_counts() {
        let h = histogram(&[0.0, 0.1, 0.5, 1.0], 2);
        assert_eq!(h, vec![(0.0, 2), (0.5, 2)]);
    }
}
