//! Thin SVD via one-sided Jacobi rotations.
//!
//! Internals run in f64 and the factors are rounded to f32 on output.
//! Iteration order is fixed (row-cyclic pair sweep) and each left singular
//! vector is sign-fixed so that its largest-magnitude component is
//! non-negative, making serialized results reproducible byte-for-byte.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const OFF_DIAG_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

pub struct SvdResult {
    /// m x r, orthonormal columns.
    pub u: Tensor,
    /// Non-increasing, non-negative, length r = min(m, n).
    pub sigma: Vec<f32>,
    /// n x r, orthonormal columns.
    pub v: Tensor,
}

/// Thin SVD of an m x n matrix: A = U · diag(sigma) · Vᵀ.
pub fn svd(a: &Tensor) -> Result<SvdResult> {
    if a.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "svd requires a 2-d tensor, got {:?}",
            a.shape()
        )));
    }
    let m = a.shape()[0];
    let n = a.shape()[1];
    if m == 0 || n == 0 {
        return Err(Error::Shape("svd of an empty matrix".into()));
    }
    let data = a.to_vec();
    for &x in &data {
        if !x.is_finite() {
            return Err(Error::NonFinite("svd input contains NaN/Inf".into()));
        }
    }
    let d64: Vec<f64> = data.iter().map(|&x| x as f64).collect();
    if m >= n {
        let (u, s, v) = jacobi_tall(&d64, m, n)?;
        finish(u, s, v, m, n)
    } else {
        // svd(Aᵀ) = V Σ Uᵀ; transpose, decompose, swap factors.
        let mut t = vec![0.0f64; m * n];
        for i in 0..m {
            for j in 0..n {
                t[j * m + i] = d64[i * n + j];
            }
        }
        let (u, s, v) = jacobi_tall(&t, n, m)?;
        finish(v, s, u, m, n)
    }
}

/// One-sided Jacobi on a tall (rows >= cols) matrix held column-major.
/// Returns (u_cols, sigma, v_cols) with u columns of length rows and
/// v columns of length cols.
#[allow(clippy::type_complexity)]
fn jacobi_tall(a_rowmajor: &[f64], rows: usize, cols: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
    let mut b: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| a_rowmajor[i * cols + j]).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut col = vec![0.0; cols];
            col[j] = 1.0;
            col
        })
        .collect();

    let mut residual = 0.0f64;
    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut max_off = 0.0f64;
        for p in 0..cols.saturating_sub(1) {
            for q in p + 1..cols {
                let alpha = dot64(&b[p], &b[p]);
                let beta = dot64(&b[q], &b[q]);
                let gamma = dot64(&b[p], &b[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let off = gamma.abs() / (alpha * beta).sqrt();
                if off > max_off {
                    max_off = off;
                }
                if off <= OFF_DIAG_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut b, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        residual = max_off;
        if max_off <= OFF_DIAG_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdConvergence {
            sweeps: MAX_SWEEPS,
            residual,
        });
    }

    let mut sigma: Vec<f64> = b.iter().map(|col| dot64(col, col).sqrt()).collect();
    // Sort descending, stable in original column index.
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap().then(i.cmp(&j)));
    let b: Vec<Vec<f64>> = order.iter().map(|&i| std::mem::take(&mut b[i])).collect();
    let v: Vec<Vec<f64>> = order.iter().map(|&i| std::mem::take(&mut v[i])).collect();
    sigma = {
        let s = sigma.clone();
        order.iter().map(|&i| s[i]).collect()
    };

    // Normalize U columns; replace numerically-null directions by an
    // orthonormal completion so U always has orthonormal columns.
    let tiny = sigma[0].max(1.0) * 1e-12;
    let mut u: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for (j, col) in b.into_iter().enumerate() {
        if sigma[j] > tiny {
            u.push(col.iter().map(|x| x / sigma[j]).collect());
        } else {
            u.push(vec![0.0; rows]);
        }
    }
    complete_null_columns(&mut u, rows, &sigma, tiny);
    Ok((u, sigma, v))
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let n = cols[p].len();
    for i in 0..n {
        let bp = cols[p][i];
        let bq = cols[q][i];
        cols[p][i] = c * bp - s * bq;
        cols[q][i] = s * bp + c * bq;
    }
}

/// Gram-Schmidt canonical basis vectors into the columns whose singular
/// value vanished, in fixed index order.
fn complete_null_columns(u: &mut [Vec<f64>], rows: usize, sigma: &[f64], tiny: f64) {
    for j in 0..u.len() {
        if sigma[j] > tiny {
            continue;
        }
        'basis: for e in 0..rows {
            let mut cand = vec![0.0f64; rows];
            cand[e] = 1.0;
            // Null columns not yet completed are all-zero, so projecting
            // against every column is safe.
            for col in u.iter() {
                let proj = dot64(&cand, col);
                for i in 0..rows {
                    cand[i] -= proj * col[i];
                }
            }
            let norm = dot64(&cand, &cand).sqrt();
            if norm > 0.5 {
                for x in cand.iter_mut() {
                    *x /= norm;
                }
                u[j] = cand;
                break 'basis;
            }
        }
    }
}

/// Apply the sign convention and round to f32 tensors with u: m x r, v: n x r.
fn finish(
    u_cols: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    v_cols: Vec<Vec<f64>>,
    m: usize,
    n: usize,
) -> Result<SvdResult> {
    let r = sigma.len();
    debug_assert_eq!(r, m.min(n));
    let mut u_cols = u_cols;
    let mut v_cols = v_cols;
    for j in 0..r {
        // Largest-magnitude component of u column must be non-negative;
        // ties resolved by the first occurrence.
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (i, &x) in u_cols[j].iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if u_cols[j][best] < 0.0 {
            for x in u_cols[j].iter_mut() {
                *x = -*x;
            }
            for x in v_cols[j].iter_mut() {
                *x = -*x;
            }
        }
    }
    let mut u = vec![0.0f32; m * r];
    for j in 0..r {
        for i in 0..m {
            u[i * r + j] = u_cols[j][i] as f32;
        }
    }
    let mut v = vec![0.0f32; n * r];
    for j in 0..r {
        for i in 0..n {
            v[i * r + j] = v_cols[j][i] as f32;
        }
    }
    Ok(SvdResult {
        u: Tensor::from_vec(u, &[m, r])?,
        sigma: sigma.iter().map(|&s| s as f32).collect(),
        v: Tensor::from_vec(v, &[n, r])?,
    })
}

impl SvdResult {
    /// U · diag(sigma truncated to k) · Vᵀ, in f64 arithmetic.
    pub fn reconstruct_rank(&self, k: usize) -> Vec<f32> {
        let m = self.u.shape()[0];
        let r = self.sigma.len();
        let n = self.v.shape()[0];
        let keep = k.min(r);
        let u = self.u.data();
        let v = self.v.data();
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0f64;
                for l in 0..keep {
                    s += u[i * r + l] as f64 * self.sigma[l] as f64 * v[j * r + l] as f64;
                }
                out[i * n + j] = s as f32;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frob(x: &[f32]) -> f64 {
        x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    #[test]
    fn diagonal_matrix() {
        let a = Tensor::from_vec(vec![3.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let r = svd(&a).unwrap();
        assert!((r.sigma[0] - 3.0).abs() < 1e-6);
        assert!((r.sigma[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identity_matrix() {
        let mut d = vec![0.0f32; 16];
        for i in 0..4 {
            d[i * 4 + i] = 1.0;
        }
        let a = Tensor::from_vec(d, &[4, 4]).unwrap();
        let r = svd(&a).unwrap();
        for s in r.sigma {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let a = Tensor::from_vec(vec![1.0, f32::NAN, 0.0, 1.0], &[2, 2]).unwrap();
        assert!(matches!(svd(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn wide_matrix_reconstructs_and_matches_gram_eigenvalues() {
        let mut st = crate::rng::Stream::new(991);
        let (m, n) = (5, 8);
        let data: Vec<f32> = (0..m * n).map(|_| st.normal()).collect();
        let a = Tensor::from_vec(data.clone(), &[m, n]).unwrap();
        let r = svd(&a).unwrap();
        let rec = r.reconstruct_rank(m.min(n));
        let diff: Vec<f32> = rec.iter().zip(&data).map(|(x, y)| x - y).collect();
        assert!(frob(&diff) / frob(&data) < 1e-5);
        // Oracle: eigenvalues of AᵀA (here AAᵀ, the smaller Gram matrix).
        let eig = gram_eigenvalues(&data, m, n);
        for (i, &s) in r.sigma.iter().enumerate() {
            assert!((s as f64 - eig[i].max(0.0).sqrt()).abs() < 1e-4);
        }
    }

    #[test]
    fn rank_deficient_keeps_orthonormal_u() {
        // Outer product -> rank 1 of a 4x3.
        let u = [1.0f32, -2.0, 0.5, 3.0];
        let w = [2.0f32, 1.0, -1.0];
        let data: Vec<f32> = u.iter().flat_map(|&a| w.iter().map(move |&b| a * b)).collect();
        let a = Tensor::from_vec(data.clone(), &[4, 3]).unwrap();
        let r = svd(&a).unwrap();
        let ud = r.u.data();
        let rcols = r.sigma.len();
        for p in 0..rcols {
            for q in 0..rcols {
                let mut s = 0.0f64;
                for i in 0..4 {
                    s += ud[i * rcols + p] as f64 * ud[i * rcols + q] as f64;
                }
                let want = if p == q { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-4, "u not orthonormal at ({p},{q}): {s}");
            }
        }
        drop(ud);
        let rec = r.reconstruct_rank(1);
        let diff: Vec<f32> = rec.iter().zip(&data).map(|(x, y)| x - y).collect();
        assert!(frob(&diff) / frob(&data) < 1e-5);
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let mut st = crate::rng::Stream::new(5);
        let data: Vec<f32> = (0..12).map(|_| st.normal()).collect();
        let a = Tensor::from_vec(data, &[4, 3]).unwrap();
        let r1 = svd(&a).unwrap();
        let r2 = svd(&a).unwrap();
        assert_eq!(r1.u.to_vec(), r2.u.to_vec());
        assert_eq!(r1.v.to_vec(), r2.v.to_vec());
        let ud = r1.u.data();
        let rcols = r1.sigma.len();
        for j in 0..rcols {
            let col: Vec<f32> = (0..4).map(|i| ud[i * rcols + j]).collect();
            let mx = col.iter().cloned().fold(-1.0f32, |acc, x| acc.max(x.abs()));
            let first = col.iter().find(|x| x.abs() == mx).unwrap();
            assert!(*first >= 0.0);
        }
    }

    /// Jacobi eigensolver for the symmetric Gram matrix A·Aᵀ (test oracle,
    /// independent of the one-sided routine above).
    fn gram_eigenvalues(a: &[f32], m: usize, n: usize) -> Vec<f64> {
        let mut g = vec![0.0f64; m * m];
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0f64;
                for k in 0..n {
                    s += a[i * n + k] as f64 * a[j * n + k] as f64;
                }
                g[i * m + j] = s;
            }
        }
        for _ in 0..100 {
            let mut off = 0.0f64;
            for p in 0..m {
                for q in p + 1..m {
                    off += g[p * m + q].abs();
                }
            }
            if off < 1e-12 {
                break;
            }
            for p in 0..m {
                for q in p + 1..m {
                    if g[p * m + q].abs() < 1e-15 {
                        continue;
                    }
                    let theta = (g[q * m + q] - g[p * m + p]) / (2.0 * g[p * m + q]);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for k in 0..m {
                        let gkp = g[k * m + p];
                        let gkq = g[k * m + q];
                        g[k * m + p] = c * gkp - s * gkq;
                        g[k * m + q] = s * gkp + c * gkq;
                    }
                    for k in 0..m {
                        let gpk = g[p * m + k];
                        let gqk = g[q * m + k];
                        g[p * m + k] = c * gpk - s * gqk;
                        g[q * m + k] = s * gpk + c * gqk;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..m).map(|i| g[i * m + i]).collect();
        eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
        eig
    }
}
