use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits column statistics; `names` label columns in the zero-variance
    /// error (falls back to `column <i>`).
    pub fn fit(data: &Matrix, names: &[String]) -> Result<Self> {
        let (n, k) = (data.rows(), data.cols());
        if n == 0 {
            return Err(Error::Empty("matrix to standardise"));
        }
        let mut mean = alloc::vec![0.0; k];
        for row in data.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = alloc::vec![0.0; k];
        for row in data.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut std = Vec::with_capacity(k);
        for (c, s) in var.into_iter().enumerate() {
            let sd = libm::sqrt(s / n as f64);
            if !sd.is_finite() {
                return Err(Error::NonFinite("matrix to standardise"));
            }
            // relative to the column scale so that float noise in a
            // constant column still counts as zero variance
            if sd <= 1e-12 * mean[c].abs().max(f64::MIN_POSITIVE) || sd == 0.0 {
                let name = names
                    .get(c)
                    .cloned()
                    .unwrap_or_else(|| alloc::format!("column {c}"));
                return Err(Error::ZeroVariance(name));
            }
            std.push(sd);
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, data: &Matrix) -> Result<Matrix> {
        if data.cols() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                actual: data.cols(),
            });
        }
        let mut out = data.clone();
        for r in 0..out.rows() {
            self.apply_row(out.row_mut(r));
        }
        Ok(out)
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Column-wise z-scores with population standard deviation.
pub fn zscore_columns(data: &Matrix, names: &[String]) -> Result<(Matrix, Standardizer)> {
    let s = Standardizer::fit(data, names)?;
    Ok((s.apply(data)?, s))
}
