use alloc::vec::Vec;

use super::dist::student_t_two_sided_p;
use crate::error::{Error, Result};
use crate::features::{Column, FeatureTable};

/// Spearman coefficient with its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationResult {
    pub coef: f64,
    pub p_value: f64,
    pub n: usize,
}

impl CorrelationResult {
    /// True when `p < alpha`.
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = alloc::vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with midranks for ties.
///
/// The p-value uses `t = r sqrt((n - 2) / (1 - r^2))` against Student's t
/// with `n - 2` degrees of freedom, two-sided. `|r| = 1` gives `p = 0`.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewSamples { min: 3, actual: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    let coef = pearson(&average_ranks(x), &average_ranks(y)).ok_or(Error::ConstantInput)?;
    let p_value = if coef.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        student_t_two_sided_p(coef * libm::sqrt(df / (1.0 - coef * coef)), df)
    };
    Ok(CorrelationResult { coef, p_value, n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnCorrelation {
    pub column: Column,
    /// Per-column failures (e.g. a constant column) do not abort the sweep.
    pub result: Result<CorrelationResult>,
}

/// Spearman of every feature column against `target`, in column order.
pub fn correlate_table(table: &FeatureTable, target: &[f64]) -> Result<Vec<ColumnCorrelation>> {
    if table.num_rows() != target.len() {
        return Err(Error::LengthMismatch {
            expected: table.num_rows(),
            actual: target.len(),
        });
    }
    Ok(table
        .columns()
        .iter()
        .enumerate()
        .map(|(c, &column)| ColumnCorrelation {
            column,
            result: spearman(&table.column_values(c), target),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn midranks() {
        assert_eq!(average_ranks(&[10.0, 30.0, 20.0]), vec![1.0, 3.0, 2.0]);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0, 5.0]), vec![1.0, 2.5, 2.5, 4.0, 5.0]);
        assert_eq!(average_ranks(&[7.0, 7.0, 7.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn perfect_monotone_and_antitone() {
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_eq!((r.coef, r.p_value, r.n), (1.0, 0.0, 4));
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(r.coef, -1.0);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn ties_on_both_sides() {
        // midranks x: [1, 2.5, 2.5, 4, 5], y: [2, 1, 3, 4.5, 4.5]
        // dx = [-2, -.5, -.5, 1, 2], dy = [-1, -2, 0, 1.5, 1.5]
        // sxy = 2 + 1 + 0 + 1.5 + 3 = 7.5, sxx = 9.5, syy = 9.5
        let r = spearman(&[1.0, 2.0, 2.0, 4.0, 5.0], &[2.0, 1.0, 3.0, 4.0, 4.0]).unwrap();
        assert!((r.coef - 7.5 / 9.5).abs() < 1e-12);
        // scipy.stats.spearmanr gives pvalue 0.11222247808652754
        assert!((r.p_value - 0.112_222_478_086_527_54).abs() < 1e-10);
    }

    #[test]
    fn error_paths() {
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::ConstantInput));
        assert_eq!(
            spearman(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::TooFewSamples { min: 3, actual: 2 })
        );
        assert!(matches!(spearman(&[1.0, 2.0, 3.0], &[1.0]), Err(Error::LengthMismatch { .. })));
        assert_eq!(
            spearman(&[1.0, f64::NAN, 3.0], &[1.0, 2.0, 3.0]),
            Err(Error::NonFinite("correlation input"))
        );
    }
}
