//! `f64` slice kernels shared by the tensor ops and the transformer engine.
//!
//! Matrix products go through `matrixmultiply`, which is single-threaded and
//! deterministic for a given CPU feature set.

/// `out[m×n] += a · b` where `a` is `m×k` and `b` is `k×n`, both given by
/// (row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    out: &mut [f64],
) {
    assert!(out.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    gemm_acc(m, k, n, a, (k, 1), b, (n, 1), out);
}

/// `out[m×n] += aᵀ · b` for `a[t×m]`, `b[t×n]` (weight-gradient form).
pub fn matmul_at_b_acc(a: &[f64], b: &[f64], out: &mut [f64], t: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), t * m);
    debug_assert_eq!(b.len(), t * n);
    debug_assert_eq!(out.len(), m * n);
    gemm_acc(m, t, n, a, (1, m), b, (n, 1), out);
}

/// `out[m×n] += a[m×k] · bᵀ` for `b[n×k]`.
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    gemm_acc(m, k, n, a, (k, 1), b, (1, k), out);
}

/// Left-to-right dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// In-place softmax over `row[..len]`, zeroing `row[len..]`.
///
/// Entries equal to `-inf` are treated as masked. Returns `false` when every
/// visible entry is masked (the row is left untouched in that case).
pub fn softmax_prefix(row: &mut [f64], len: usize) -> bool {
    let max = row[..len].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return false;
    }
    let mut sum = 0.0;
    for v in &mut row[..len] {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in &mut row[..len] {
        *v *= inv;
    }
    for v in &mut row[len..] {
        *v = 0.0;
    }
    true
}

/// Numerically stable `log(sum(exp(row)))`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_bt_matches_explicit_transpose() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 1.0, 2.0, 1.0, 0.0]; // 2x3 -> bt 3x2
        let mut out = vec![0.0; 4];
        matmul_a_bt_acc(&a, &b, &mut out, 2, 3, 2);
        assert_eq!(out, vec![4.0, 4.0, 10.0, 13.0]);
    }

    #[test]
    fn at_b_is_weight_gradient() {
        let a = [1.0, 2.0, 3.0, 4.0]; // t=2, m=2
        let b = [1.0, 1.0, 0.0, 2.0]; // t=2, n=2
        let mut out = vec![0.0; 4];
        matmul_at_b_acc(&a, &b, &mut out, 2, 2, 2);
        // aᵀ = [[1,3],[2,4]]
        assert_eq!(out, vec![1.0, 7.0, 2.0, 10.0]);
    }

    #[test]
    fn dot_matches_naive_sum() {
        for len in [0, 1, 7, 8, 9, 16, 23] {
            let a: Vec<f64> = (0..len).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..len).map(|i| (i as f64 * 1.3).cos()).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12, "len {len}");
        }
    }

    #[test]
    fn softmax_prefix_masks_tail() {
        let mut row = [0.0, 0.0, 5.0];
        assert!(softmax_prefix(&mut row, 2));
        assert_eq!(row, [0.5, 0.5, 0.0]);
        let mut dead = [f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert!(!softmax_prefix(&mut dead, 2));
    }
}
