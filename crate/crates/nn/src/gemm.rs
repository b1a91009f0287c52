//! Thin safe wrapper over `matrixmultiply::sgemm`.

/// Strided view description of a matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f32],
    pub rs: usize,
    pub cs: usize,
}

/// `c = alpha * a * b + beta * c` where `a` is `m x k`, `b` is `k x n` and `c`
/// is a row-major `m x n` matrix with row stride `c_rs`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: Mat<'_>,
    b: Mat<'_>,
    beta: f32,
    c: &mut [f32],
    c_rs: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(extent(m, k, a.rs, a.cs) <= a.data.len(), "sgemm: lhs out of bounds");
    assert!(extent(k, n, b.rs, b.cs) <= b.data.len(), "sgemm: rhs out of bounds");
    assert!(extent(m, n, c_rs, 1) <= c.len(), "sgemm: output out of bounds");
    // SAFETY: the extents of all three operands were bounds-checked above and
    // `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            c_rs as isize,
            1,
        );
    }
}

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}
