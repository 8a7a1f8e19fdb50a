//! Strided GEMM and small index helpers shared by the forward and backward
//! rules.

/// `c = alpha * a · b + beta * c` for an `m×k` by `k×n` product with
/// arbitrary (non-negative) row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: lhs out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: rhs out of bounds");
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm: out out of bounds");
    // SAFETY: every index touched by dgemm is bounded by the asserts above and
    // the three slices cannot alias (`c` is a unique borrow).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `src` (with `shape`) into a new buffer with axes `a0` and `a1`
/// exchanged.
pub(crate) fn swap_axes(src: &[f64], shape: &[usize], a0: usize, a1: usize) -> Vec<f64> {
    let in_strides = strides(shape);
    let mut out_shape = shape.to_vec();
    out_shape.swap(a0, a1);
    let mut perm_strides = in_strides.clone();
    perm_strides.swap(a0, a1);
    let mut out = Vec::with_capacity(src.len());
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..src.len() {
        out.push(src[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += perm_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= perm_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}
