use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (divisor `n - 1`); `None` for a single value.
    pub std: Option<f64>,
}

/// Per-group mean and sample standard deviation, groups in ascending order.
pub fn group_summary<K: Ord + Clone>(values: &[f64], groups: &[K]) -> Result<Vec<(K, GroupStats)>> {
    if values.is_empty() {
        return Err(Error::Empty("values to summarise"));
    }
    if values.len() != groups.len() {
        return Err(Error::LengthMismatch {
            expected: values.len(),
            actual: groups.len(),
        });
    }
    let mut buckets: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for (v, g) in values.iter().zip(groups) {
        buckets.entry(g.clone()).or_default().push(*v);
    }
    Ok(buckets
        .into_iter()
        .map(|(k, vs)| {
            let n = vs.len();
            let mean = vs.iter().sum::<f64>() / n as f64;
            let std = (n > 1).then(|| {
                let ss: f64 = vs.iter().map(|v| (v - mean) * (v - mean)).sum();
                libm::sqrt(ss / (n - 1) as f64)
            });
            (k, GroupStats { n, mean, std })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_groups_by_hand() {
        let s = group_summary(&[1.0, 2.0, 3.0, 4.0], &['a', 'a', 'b', 'b']).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].0, 'a');
        assert_eq!(s[0].1.mean, 1.5);
        assert!((s[0].1.std.unwrap() - 0.7071).abs() < 1e-4);
        assert_eq!(s[1].1.mean, 3.5);
        assert!((s[1].1.std.unwrap() - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn single_group_is_overall() {
        let vals = [0.2, 0.9, 0.4, 0.7];
        let s = group_summary(&vals, &[0u8; 4]).unwrap();
        assert_eq!(s.len(), 1);
        let mean = 0.55;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert!((s[0].1.mean - mean).abs() < 1e-15);
        assert!((s[0].1.std.unwrap() - libm::sqrt(var)).abs() < 1e-15);
    }

    #[test]
    fn empty_and_singleton() {
        assert_eq!(group_summary::<u8>(&[], &[]), Err(Error::Empty("values to summarise")));
        let s = group_summary(&[3.0], &[1u8]).unwrap();
        assert_eq!(s[0].1.std, None);
    }
}
