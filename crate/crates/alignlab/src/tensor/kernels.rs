//! Raw f32 kernels shared by the autodiff engine and the inference path.
//!
//! Both paths call the exact same routines so that training-time forward
//! passes and KV-cached decoding produce bitwise-identical numbers.

/// Dot product with a fixed 8-lane accumulator pattern. Element i always
/// lands in lane i % 8, so appending zero terms cannot change the result;
/// cached decoding relies on that padding invariance for bitwise parity
/// with full forward passes. The loop still autovectorizes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let i = c * 8;
        let (ai, bi) = (&a[i..i + 8], &b[i..i + 8]);
        for l in 0..8 {
            acc[l] += ai[l] * bi[l];
        }
    }
    for i in chunks * 8..a.len() {
        acc[i % 8] += a[i] * b[i];
    }
    let mut s = 0.0f32;
    for l in 0..8 {
        s += acc[l];
    }
    s
}

/// Transpose a row-major (rows x cols) matrix into (cols x rows).
pub fn transpose(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut t = vec![0.0f32; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// C[m,n] = A[m,k] * B[k,n].
pub fn matmul_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let bt = transpose(b, k, n);
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        let out = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            out[j] = dot(row, &bt[j * k..(j + 1) * k]);
        }
    }
    c
}

/// C[m,n] = A[m,k] * B[n,k]^T. B is already laid out with the contraction
/// axis contiguous, so no packing is needed.
pub fn matmul_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        let out = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            out[j] = dot(row, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// C[k,n] = A[m,k]^T * B[m,n].
pub fn matmul_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let at = transpose(a, m, k);
    let bt = transpose(b, m, n);
    let mut c = vec![0.0f32; k * n];
    for p in 0..k {
        let row = &at[p * m..(p + 1) * m];
        let out = &mut c[p * n..(p + 1) * n];
        for j in 0..n {
            out[j] = dot(row, &bt[j * m..(j + 1) * m]);
        }
    }
    c
}

/// In-place softmax over one row; the normalizer accumulates in f64.
pub fn softmax_row(row: &mut [f32]) {
    let mut mx = f32::NEG_INFINITY;
    for &x in row.iter() {
        if x > mx {
            mx = x;
        }
    }
    let mut denom = 0.0f64;
    for x in row.iter_mut() {
        *x = (*x - mx).exp();
        denom += *x as f64;
    }
    let inv = (1.0 / denom) as f32;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

/// Layer norm of one row with learned gain/offset; moments in f64.
pub fn layer_norm_row(row: &[f32], gamma: &[f32], beta: &[f32], eps: f32, out: &mut [f32]) {
    let n = row.len();
    let mut mean = 0.0f64;
    for &x in row {
        mean += x as f64;
    }
    mean /= n as f64;
    let mut var = 0.0f64;
    for &x in row {
        let d = x as f64 - mean;
        var += d * d;
    }
    var /= n as f64;
    let inv = 1.0 / (var + eps as f64).sqrt();
    for j in 0..n {
        let norm = ((row[j] as f64 - mean) * inv) as f32;
        out[j] = norm * gamma[j] + beta[j];
    }
}

/// Gaussian error linear unit, tanh approximation.
#[inline]
pub fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_56; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Derivative of the tanh-approximated gelu.
#[inline]
pub fn gelu_grad(x: f32) -> f32 {
    const C: f32 = 0.797_884_56;
    let x3 = x * x * x;
    let inner = C * (x + 0.044715 * x3);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..37).map(|i| i as f32 * 0.1).collect();
        let b: Vec<f32> = (0..37).map(|i| (i as f32 - 5.0) * 0.3).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
        assert!((dot(&a, &b) as f64 - naive).abs() < 1e-3);
    }

    #[test]
    fn matmul_variants_agree() {
        let m = 3;
        let k = 5;
        let n = 4;
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32) * 0.37 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32) * 0.11 + 0.5).collect();
        let c = matmul_nn(&a, &b, m, k, n);
        let bt = transpose(&b, k, n);
        let c2 = matmul_nt(&a, &bt, m, k, n);
        assert_eq!(c, c2);
        let at = transpose(&a, m, k);
        let c3 = matmul_tn(&at, &b, k, m, n);
        assert_eq!(c, c3);
    }

    #[test]
    fn softmax_row_sums_to_one() {
        let mut r = vec![1.0f32, 2.0, 3.0, -1.0];
        softmax_row(&mut r);
        let s: f32 = r.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for i in -20..20 {
            let x = i as f32 * 0.25;
            let h = 1e-3;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-3, "x={x}");
        }
    }
}
