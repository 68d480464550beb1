//! Row-major matrix kernels shared by conv (via im2col) and dense layers.
//!
//! Loop orders are chosen so the innermost loop runs over contiguous slices
//! and autovectorizes.

use super::Scalar;

/// out[m x n] += a[m x k] * b[k x n]
///
/// The l-loop is unrolled by four so each pass over the output row does four
/// multiply-adds per store.
pub fn matmul_acc<S: Scalar>(out: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let k4 = k / 4 * 4;
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        let mut l = 0;
        while l < k4 {
            let (a0, a1, a2, a3) = (arow[l], arow[l + 1], arow[l + 2], arow[l + 3]);
            let b0 = &b[l * n..(l + 1) * n];
            let b1 = &b[(l + 1) * n..(l + 2) * n];
            let b2 = &b[(l + 2) * n..(l + 3) * n];
            let b3 = &b[(l + 3) * n..(l + 4) * n];
            for j in 0..n {
                orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            l += 4;
        }
        while l < k {
            let av = arow[l];
            let brow = &b[l * n..(l + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * *bv;
            }
            l += 1;
        }
    }
}

/// out[m x k2] += a[m x n] * b[k2 x n]^T  (rows of `a` dotted with rows of `b`)
pub fn matmul_abt_acc<S: Scalar>(out: &mut [S], a: &[S], b: &[S], m: usize, n: usize, k2: usize) {
    debug_assert_eq!(out.len(), m * k2);
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k2 * n);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k2..(i + 1) * k2];
        for (r, o) in orow.iter_mut().enumerate() {
            *o += dot(arow, &b[r * n..(r + 1) * n]);
        }
    }
}

/// out[m2 x n] += a[k x m2]^T * b[k x n]
pub fn matmul_atb_acc<S: Scalar>(out: &mut [S], a: &[S], b: &[S], k: usize, m2: usize, n: usize) {
    debug_assert_eq!(out.len(), m2 * n);
    debug_assert_eq!(a.len(), k * m2);
    debug_assert_eq!(b.len(), k * n);
    let k4 = k / 4 * 4;
    for i in 0..m2 {
        let orow = &mut out[i * n..(i + 1) * n];
        let mut l = 0;
        while l < k4 {
            let (a0, a1, a2, a3) = (
                a[l * m2 + i],
                a[(l + 1) * m2 + i],
                a[(l + 2) * m2 + i],
                a[(l + 3) * m2 + i],
            );
            let b0 = &b[l * n..(l + 1) * n];
            let b1 = &b[(l + 1) * n..(l + 2) * n];
            let b2 = &b[(l + 2) * n..(l + 3) * n];
            let b3 = &b[(l + 3) * n..(l + 4) * n];
            for j in 0..n {
                orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            l += 4;
        }
        while l < k {
            let av = a[l * m2 + i];
            let brow = &b[l * n..(l + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * *bv;
            }
            l += 1;
        }
    }
}

/// Dot product with four accumulators so the reduction vectorizes.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = S::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}
