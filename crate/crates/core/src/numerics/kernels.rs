//! Row-major slice kernels used by the tape.

/// `c (+)= op(a) · op(b)` where `op(a)` is `[m × k]` and `op(b)` is `[k × n]`.
///
/// With `trans_a`, `a` is stored as `[k × m]`; with `trans_b`, `b` is stored as
/// `[n × k]`. When `accumulate` is false `c` is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above pin every buffer to exactly the extent the
    // strides address, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// In-place softmax over one row, restricted to entries where `allowed` is true.
/// Disallowed entries become exactly zero; a fully disallowed row becomes all zeros.
pub fn softmax_row(row: &mut [f64], allowed: Option<&[bool]>) {
    let mut max = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if allowed.is_none_or(|a| a[i]) && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut total = 0.0;
    for (i, v) in row.iter_mut().enumerate() {
        if allowed.is_none_or(|a| a[i]) {
            *v = (*v - max).exp();
            total += *v;
        } else {
            *v = 0.0;
        }
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Numerically stable `log(softmax(row))`.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - log_total).collect()
}
