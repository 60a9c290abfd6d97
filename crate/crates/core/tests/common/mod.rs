//! Reference implementations used to check the library. Each one takes the
//! slow, obvious route and shares no code with the crate under test.
#![allow(dead_code)]

/// Midranks by counting: `1 + #less + (#equal - 1) / 2`.
pub fn ranks_by_counting(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&y| y < x).count() as f64;
            let equal = xs.iter().filter(|&&y| y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson_textbook(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let mx = sx / n;
    let my = sy / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson_textbook(&ranks_by_counting(x), &ranks_by_counting(y))
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Pairwise definition of patch uniformity, O(n^2 d).
pub fn uniformity_brute_force(patches: &[f32], d: usize) -> f64 {
    let rows: Vec<&[f32]> = patches.chunks(d).collect();
    let n = rows.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut u = 0.0;
        for j in 0..n {
            if i != j {
                u += cosine(rows[i], rows[j]);
            }
        }
        total += u / (n - 1) as f64;
    }
    total / n as f64
}

/// Solves `A x = b` by Gauss-Jordan elimination with partial pivoting and
/// also returns `A^{-1}`.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// OLS through the normal equations. Returns `(beta, std_err)` with the
/// intercept first.
pub fn ols_normal_equations(y: &[f64], x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let design: Vec<Vec<f64>> = x
        .iter()
        .map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect())
        .collect();
    let p = design[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, yi) in design.iter().zip(y) {
        for i in 0..p {
            xty[i] += row[i] * yi;
            for j in 0..p {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    let inv = gauss_jordan_inverse(&xtx);
    let beta: Vec<f64> = (0..p).map(|i| (0..p).map(|j| inv[i][j] * xty[j]).sum()).collect();
    let rss: f64 = design
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let f: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            (yi - f).powi(2)
        })
        .sum();
    let s2 = rss / (n - p) as f64;
    let se = (0..p).map(|i| (s2 * inv[i][i]).sqrt()).collect();
    (beta, se)
}

/// Forward pass with explicit nested loops over `[W1 | b1 | W2 | b2]`.
pub fn sae_forward_oracle(params: &[f64], d: usize, h: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w1 = |i: usize, j: usize| params[i * d + j];
    let b1 = |i: usize| params[h * d + i];
    let w2 = |i: usize, j: usize| params[h * d + h + i * h + j];
    let b2 = |i: usize| params[2 * h * d + h + i];
    let mut z = vec![0.0; h];
    for i in 0..h {
        let mut s = b1(i);
        for j in 0..d {
            s += w1(i, j) * x[j];
        }
        z[i] = if s > 0.0 { s } else { 0.0 };
    }
    let mut out = vec![0.0; d];
    for i in 0..d {
        let mut s = b2(i);
        for j in 0..h {
            s += w2(i, j) * z[j];
        }
        out[i] = s;
    }
    (z, out)
}

pub fn sae_total_loss_oracle(params: &[f64], d: usize, h: usize, x: &[f64], sparsity_weight: f64) -> f64 {
    let (z, out) = sae_forward_oracle(params, d, h, x);
    let recon: f64 = out.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
    recon + sparsity_weight * z.iter().map(|v| v.abs()).sum::<f64>()
}

/// Central differences of the total loss, step `h`.
pub fn finite_difference_gradient(params: &[f64], d: usize, hd: usize, x: &[f64], w: f64, step: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = sae_total_loss_oracle(&p, d, hd, x, w);
            p[i] = orig - step;
            let down = sae_total_loss_oracle(&p, d, hd, x, w);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Small deterministic generator so oracle fixtures don't depend on the
/// library's RNG choices.
pub struct Lcg(pub u64);

impl Lcg {
    /// LCG step followed by a splitmix64 finaliser; raw LCG outputs fed to
    /// Box-Muller would distort the tails.
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.uniform() * n as f64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
