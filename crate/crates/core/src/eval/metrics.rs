use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Euclidean distance between two positions.
pub fn distance_error(predicted: [f64; 2], label: [f64; 2]) -> f64 {
    (predicted[0] - label[0]).hypot(predicted[1] - label[1])
}

/// 0, 10, ..., 300 cm.
pub fn default_thresholds() -> Vec<f64> {
    (0..=30).map(|i| i as f64 * 10.0).collect()
}

/// Fraction of `errors` strictly below each threshold.
pub fn cdf(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::Data("cdf of an empty error list".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e < t) as f64 / sorted.len() as f64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean and linearly interpolated quartiles.
pub fn summarize(errors: &[f64]) -> Result<Summary> {
    if errors.is_empty() {
        return Err(Error::Data("summary of an empty error list".into()));
    }
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    Ok(Summary {
        count: s.len(),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        median: q(0.5),
        q1: q(0.25),
        q3: q(0.75),
        min: s[0],
        max: s[s.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        assert_eq!(distance_error([0.0, 0.0], [3.0, 4.0]), 5.0);
        assert_eq!(distance_error([7.5, -2.0], [7.5, -2.0]), 0.0);
    }

    #[test]
    fn cdf_examples() {
        let c = cdf(&[10.0, 20.0, 60.0], &[50.0, 5.0, 100.0, 60.0]).unwrap();
        assert_eq!(c, [2.0 / 3.0, 0.0, 1.0, 2.0 / 3.0]);
        assert!(cdf(&[], &[1.0]).is_err());
        assert_eq!(default_thresholds().len(), 31);
        assert_eq!(default_thresholds()[5], 50.0);
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.median, s.q1, s.q3), (2.5, 2.5, 1.75, 3.25));
        assert_eq!((s.min, s.max, s.count), (1.0, 4.0, 4));
        assert!(summarize(&[]).is_err());
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(a in prop::array::uniform2(-1e3f64..1e3), b in prop::array::uniform2(-1e3f64..1e3)) {
            prop_assert_eq!(distance_error(a, b), distance_error(b, a));
            prop_assert!(distance_error(a, b) >= 0.0);
        }
    }
}
