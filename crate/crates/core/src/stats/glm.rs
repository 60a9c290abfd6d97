//! Gaussian GLM with identity link, i.e. ordinary least squares with
//! Wald statistics, solved by Householder QR of the design `[1 | X]`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::dist::normal_two_sided_p;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const INTERCEPT: &str = "Intercept";

/// Relative size of a pivot, compared with its column's norm, below which
/// the column is treated as a linear combination of the earlier ones.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GlmTerm {
    pub name: String,
    pub coef: f64,
    pub std_err: f64,
    /// `coef / std_err`.
    pub z: f64,
    /// Two-sided normal-approximation p-value of `z`.
    pub p_value: f64,
}

impl GlmTerm {
    pub fn stars(&self) -> &'static str {
        significance_stars(self.p_value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    /// Intercept first, then predictors in input order.
    pub terms: Vec<GlmTerm>,
    /// `RSS / (n - k - 1)`.
    pub dispersion: f64,
    pub n: usize,
    pub rss: f64,
}

impl GlmFit {
    pub fn coefficients(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.coef).collect()
    }

    pub fn term(&self, name: &str) -> Option<&GlmTerm> {
        self.terms.iter().find(|t| t.name == name)
    }

    /// Fitted value for one predictor row (without the intercept column).
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.terms[0].coef + self.terms[1..].iter().zip(row).map(|(t, x)| t.coef * x).sum::<f64>()
    }
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Householder QR in column-major storage. The upper triangle holds `R`;
/// below the diagonal sit the reflector tails, with each reflector's leading
/// entry kept in `tau`.
struct Qr {
    n: usize,
    p: usize,
    /// column-major storage
    a: Vec<f64>,
    /// leading entry of each reflector
    tau: Vec<f64>,
}

impl Qr {
    fn col(&self, j: usize) -> &[f64] {
        &self.a[j * self.n..(j + 1) * self.n]
    }

    /// Factorises column by column; stops at the first dependent column and
    /// returns its index.
    fn factor(design: &Matrix) -> (Self, Option<usize>) {
        let (n, p) = (design.rows(), design.cols());
        let mut a = vec![0.0; n * p];
        for r in 0..n {
            for c in 0..p {
                a[c * n + r] = design.get(r, c);
            }
        }
        let col_norms: Vec<f64> = (0..p)
            .map(|c| libm::sqrt(a[c * n..(c + 1) * n].iter().map(|v| v * v).sum()))
            .collect();
        let mut qr = Qr {
            n,
            p,
            a,
            tau: vec![0.0; p],
        };
        for j in 0..p {
            let norm_below = libm::sqrt(qr.col(j)[j..].iter().map(|v| v * v).sum());
            if col_norms[j] == 0.0 || norm_below <= RANK_TOL * col_norms[j] {
                return (qr, Some(j));
            }
            let x0 = qr.a[j * n + j];
            let alpha = if x0 >= 0.0 { -norm_below } else { norm_below };
            // v = x - alpha e1, stored in place with v[0] kept separately
            let v0 = x0 - alpha;
            qr.a[j * n + j] = alpha;
            let vtv = v0 * v0 + qr.col(j)[j + 1..].iter().map(|v| v * v).sum::<f64>();
            let tau = 2.0 / vtv;
            qr.tau[j] = v0;
            // apply H = I - tau v v^T to the remaining columns
            for c in j + 1..p {
                let mut s = v0 * qr.a[c * n + j];
                for r in j + 1..n {
                    s += qr.a[j * n + r] * qr.a[c * n + r];
                }
                s *= tau;
                qr.a[c * n + j] -= s * v0;
                for r in j + 1..n {
                    let vr = qr.a[j * n + r];
                    qr.a[c * n + r] -= s * vr;
                }
            }
        }
        (qr, None)
    }

    /// Applies `Q^T` (from the first `k` reflectors) to `y` in place.
    fn apply_qt(&self, k: usize, y: &mut [f64]) {
        let n = self.n;
        for j in 0..k {
            let v0 = self.tau[j];
            let vtv = v0 * v0 + self.col(j)[j + 1..].iter().map(|v| v * v).sum::<f64>();
            let mut s = v0 * y[j];
            for r in j + 1..n {
                s += self.a[j * n + r] * y[r];
            }
            s *= 2.0 / vtv;
            y[j] -= s * v0;
            for r in j + 1..n {
                y[r] -= s * self.a[j * n + r];
            }
        }
    }

    #[inline]
    fn r(&self, i: usize, j: usize) -> f64 {
        self.a[j * self.n + i]
    }

    /// Solves `R[..k, ..k] x = b[..k]`.
    fn back_substitute(&self, k: usize, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = b[i];
            for j in i + 1..k {
                s -= self.r(i, j) * x[j];
            }
            x[i] = s / self.r(i, i);
        }
        x
    }

    /// Columns among `0..j` that column `j` depends on, via least squares of
    /// column `j` on its predecessors.
    fn dependencies(&self, j: usize) -> Vec<usize> {
        let rhs: Vec<f64> = (0..j).map(|i| self.r(i, j)).collect();
        let c = self.back_substitute(j, &rhs);
        let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        c.iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > 1e-8 * scale.max(f64::MIN_POSITIVE))
            .map(|(i, _)| i)
            .collect()
    }

    /// Diagonal of `(R^T R)^{-1}`, i.e. squared row norms of `R^{-1}`.
    fn inverse_gram_diagonal(&self) -> Vec<f64> {
        let p = self.p;
        // columns of R^{-1} via back substitution on unit vectors
        let mut diag = vec![0.0; p];
        let mut e = vec![0.0; p];
        for c in 0..p {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            let col = self.back_substitute(p, &e);
            for (d, v) in diag.iter_mut().zip(&col) {
                *d += v * v;
            }
        }
        diag
    }
}

/// Fits `y ~ 1 + X`. `names` labels the columns of `x`; the intercept term
/// is named [`INTERCEPT`].
///
/// Predictors are expected to be z-scored already; with centred columns
/// the intercept equals `mean(y)`.
pub fn glm_gaussian(y: &[f64], x: &Matrix, names: &[String]) -> Result<GlmFit> {
    let (n, k) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    if names.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: names.len(),
        });
    }
    if n <= k + 1 {
        return Err(Error::TooFewSamples {
            min: k + 2,
            actual: n,
        });
    }
    if y.iter().chain(x.as_slice()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GLM input"));
    }

    let p = k + 1;
    let mut design = Matrix::zeros(n, p);
    for r in 0..n {
        let row = design.row_mut(r);
        row[0] = 1.0;
        row[1..].copy_from_slice(x.row(r));
    }
    let term_name = |i: usize| -> String {
        if i == 0 {
            INTERCEPT.into()
        } else {
            names[i - 1].clone()
        }
    };

    let (qr, dependent) = Qr::factor(&design);
    if let Some(j) = dependent {
        let mut cols: Vec<String> = qr.dependencies(j).into_iter().map(term_name).collect();
        cols.push(term_name(j));
        return Err(Error::RankDeficient(cols));
    }

    let mut qty = y.to_vec();
    qr.apply_qt(p, &mut qty);
    let beta = qr.back_substitute(p, &qty);

    let rss: f64 = (0..n)
        .map(|r| {
            let fitted: f64 = design.row(r).iter().zip(&beta).map(|(a, b)| a * b).sum();
            let e = y[r] - fitted;
            e * e
        })
        .sum();
    let dispersion = rss / (n - p) as f64;
    let diag = qr.inverse_gram_diagonal();

    let terms = beta
        .iter()
        .zip(&diag)
        .enumerate()
        .map(|(i, (&coef, &d))| {
            let std_err = libm::sqrt(dispersion * d);
            let z = coef / std_err;
            GlmTerm {
                name: term_name(i),
                coef,
                std_err,
                z,
                p_value: if z.is_nan() { 1.0 } else { normal_two_sided_p(z) },
            }
        })
        .collect();

    Ok(GlmFit {
        terms,
        dispersion,
        n,
        rss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| alloc::format!("x{i}")).collect()
    }

    #[test]
    fn noiseless_recovery() {
        // x columns centred, y = 0.7 + 0.5 x0 - 0.2 x1
        let rows = [[-1.0, 0.5], [0.0, -1.0], [1.0, 0.25], [0.5, 1.5], [-0.5, -1.25]];
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| 0.7 + 0.5 * r[0] - 0.2 * r[1]).collect();
        let fit = glm_gaussian(&y, &x, &names(2)).unwrap();
        let c = fit.coefficients();
        assert!((c[0] - 0.7).abs() < 1e-12);
        assert!((c[1] - 0.5).abs() < 1e-12);
        assert!((c[2] + 0.2).abs() < 1e-12);
        assert!(fit.dispersion < 1e-25);
        assert_eq!(fit.terms[0].name, INTERCEPT);
    }

    #[test]
    fn duplicated_column_names_both() {
        let x = Matrix::from_rows(&[[1.0, 1.0, 3.0], [2.0, 2.0, 1.0], [4.0, 4.0, 0.0], [0.0, 0.0, 2.0], [5.0, 5.0, 7.0]])
            .unwrap();
        let names = ["act_max".to_string(), "act_maxabs".to_string(), "other".to_string()];
        let err = glm_gaussian(&[1.0, 2.0, 3.0, 4.0, 5.0], &x, &names).unwrap_err();
        assert_eq!(err, Error::RankDeficient(vec!["act_max".into(), "act_maxabs".into()]));
        assert!(err.to_string().contains("act_max, act_maxabs"));
    }

    #[test]
    fn constant_column_collides_with_intercept() {
        let x = Matrix::from_rows(&[[2.0, 1.0], [2.0, 3.0], [2.0, 0.0], [2.0, 5.0]]).unwrap();
        let err = glm_gaussian(&[1.0, 2.0, 3.0, 4.0], &x, &names(2)).unwrap_err();
        assert_eq!(err, Error::RankDeficient(vec![INTERCEPT.into(), "x0".into()]));
    }

    #[test]
    fn too_few_samples() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert_eq!(
            glm_gaussian(&[1.0, 2.0], &x, &names(1)),
            Err(Error::TooFewSamples { min: 3, actual: 2 })
        );
    }

    #[test]
    fn simple_regression_standard_errors() {
        // y = a + b x on x = 1..5 with known closed form
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [1.1, 1.9, 3.2, 3.9, 5.3];
        let x = Matrix::from_vec(5, 1, xs.to_vec()).unwrap();
        let fit = glm_gaussian(&ys, &x, &names(1)).unwrap();
        let mx = 3.0;
        let my = ys.iter().sum::<f64>() / 5.0;
        let sxx: f64 = xs.iter().map(|v| (v - mx) * (v - mx)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
        let b = sxy / sxx;
        let a = my - b * mx;
        let rss: f64 = xs.iter().zip(&ys).map(|(u, v)| (v - a - b * u).powi(2)).sum();
        let s2 = rss / 3.0;
        assert!((fit.terms[1].coef - b).abs() < 1e-12);
        assert!((fit.terms[0].coef - a).abs() < 1e-12);
        assert!((fit.terms[1].std_err - libm::sqrt(s2 / sxx)).abs() < 1e-12);
        assert!((fit.terms[0].std_err - libm::sqrt(s2 * (0.2 + mx * mx / sxx))).abs() < 1e-12);
        assert!((fit.dispersion - s2).abs() < 1e-14);
        for t in &fit.terms {
            assert!((t.z - t.coef / t.std_err).abs() < 1e-9);
        }
    }

    #[test]
    fn stars() {
        assert_eq!(significance_stars(0.0005), "***");
        assert_eq!(significance_stars(0.005), "**");
        assert_eq!(significance_stars(0.02), "*");
        assert_eq!(significance_stars(0.05), "");
    }
}
