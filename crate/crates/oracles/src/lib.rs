//! Reference computations that share no code path with the toolkit: plain
//! `Vec` linear algebra with a cyclic Jacobi eigensolver, exact big-integer
//! binomial tails, and exhaustive pair/distance enumeration.

#![allow(clippy::needless_range_loop)]

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

pub type Mat = Vec<Vec<f64>>;

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let m = b[0].len();
    let k = b.len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    let n = a.len();
    let m = a[0].len();
    (0..m).map(|j| (0..n).map(|i| a[i][j]).collect()).collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and the matrix whose columns are the eigenvectors.
pub fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut a = a.clone();
    let mut v: Mat = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Symmetric PSD square root via Jacobi, negative eigenvalues clamped.
pub fn psd_sqrt(a: &Mat) -> Mat {
    let (vals, vecs) = jacobi_eigen(a);
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = (0..n).map(|k| vecs[i][k] * vals[k].max(0.0).sqrt() * vecs[j][k]).sum();
        }
    }
    out
}

/// `Tr((a b)^{1/2})`: diagonalize `a`, form `a^{1/2}`, diagonalize
/// `a^{1/2} b a^{1/2}`, sum square roots of its eigenvalues.
pub fn trace_sqrt_product(a: &Mat, b: &Mat) -> f64 {
    let r = psd_sqrt(a);
    let m = matmul(&matmul(&r, b), &r);
    let n = m.len();
    let sym: Mat = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (m[i][j] + m[j][i])).collect())
        .collect();
    jacobi_eigen(&sym).0.iter().map(|v| v.max(0.0).sqrt()).sum()
}

pub fn fid(mu_r: &[f64], cov_r: &Mat, mu_g: &[f64], cov_g: &Mat) -> f64 {
    let mean: f64 = mu_r.iter().zip(mu_g).map(|(a, b)| (a - b) * (a - b)).sum();
    let tr: f64 = (0..cov_r.len()).map(|i| cov_r[i][i] + cov_g[i][i]).sum();
    mean + tr - 2.0 * trace_sqrt_product(cov_r, cov_g)
}

/// Two-pass mean and `n - 1` covariance.
pub fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Mat) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let cov = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect();
    (mean, cov)
}

fn binomial_row(n: u64) -> Vec<BigUint> {
    let mut row = vec![BigUint::one()];
    for i in 0..n {
        let next = &row[i as usize] * BigUint::from(n - i) / BigUint::from(i + 1);
        row.push(next);
    }
    row
}

/// `num / den` as the nearest-ish f64 (relative error ~1e-16).
pub fn ratio_to_f64(num: &BigUint, den: &BigUint) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let shift = den.bits() as i64 - num.bits() as i64 + 80;
    let q = if shift >= 0 {
        (num << shift as u64) / den
    } else {
        num / (den << (-shift) as u64)
    };
    q.to_f64().unwrap() * 2f64.powi(-(shift as i32))
}

/// Exact `P(X >= k)` for `X ~ Binomial(n, p_num / p_den)`, summed in
/// integers and converted once.
pub fn binomial_upper_tail(k: u64, n: u64, p_num: u64, p_den: u64) -> f64 {
    let coeffs = binomial_row(n);
    let q_num = p_den - p_num;
    let mut tail = BigUint::zero();
    for i in k..=n {
        tail += &coeffs[i as usize] * BigUint::from(p_num).pow(i as u32) * BigUint::from(q_num).pow((n - i) as u32);
    }
    ratio_to_f64(&tail, &BigUint::from(p_den).pow(n as u32))
}

/// Exhaustive pair count: `(2 * #{pos > neg} + #{pos == neg}) / (2 |pos| |neg|)`.
pub fn auc_pairs(pos: &[f64], neg: &[f64]) -> f64 {
    let mut doubled = 0u64;
    for &p in pos {
        for &q in neg {
            if p > q {
                doubled += 2;
            } else if p == q {
                doubled += 1;
            }
        }
    }
    doubled as f64 / (2 * pos.len() * neg.len()) as f64
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Row index minimizing the summed distance to all rows; first index wins
/// ties.
pub fn medoid(rows: &[Vec<f64>]) -> usize {
    let sums: Vec<f64> = rows
        .iter()
        .map(|r| rows.iter().map(|o| euclidean(r, o)).sum())
        .collect();
    let mut best = 0;
    for i in 1..sums.len() {
        if sums[i] < sums[best] {
            best = i;
        }
    }
    best
}

pub fn fmd(real: &[Vec<f64>], gen: &[Vec<f64>]) -> f64 {
    let m = &real[medoid(real)];
    gen.iter().map(|g| euclidean(m, g)).sum::<f64>() / gen.len() as f64
}
