//! Safe wrappers over `matrixmultiply::dgemm` for the three layouts the
//! layers need. All matrices are row-major slices.

/// `c = a · b (+ c if accumulate)` with `a: [m, k]`, `b: [k, n]`.
pub(crate) fn matmul(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    gemm(m, k, n, a, (k, 1), b, (n, 1), c, accumulate);
}

/// `c = a · bᵀ (+ c)` with `a: [m, k]`, `b: [n, k]`.
pub(crate) fn matmul_bt(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    gemm(m, k, n, a, (k, 1), b, (1, k), c, accumulate);
}

/// `c = aᵀ · b (+ c)` with `a: [k, m]`, `b: [k, n]`.
pub(crate) fn matmul_at(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    gemm(m, k, n, a, (1, m), b, (n, 1), c, accumulate);
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index dgemm touches:
    // a[(m-1)*rsa + (k-1)*csa] < m*k, b[(k-1)*rsb + (n-1)*csb] < k*n,
    // c[(m-1)*n + (n-1)] < m*n for the strides used by the wrappers.
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
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
