//! Strided matrix views over flat `f64` slices and a checked GEMM.

/// Shape and strides of a matrix stored somewhere inside a slice, starting at `offset`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct View {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
    pub offset: usize,
}

impl View {
    pub const fn row_major(rows: usize, cols: usize) -> Self {
        View {
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
            offset: 0,
        }
    }

    pub const fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            offset: self.offset,
        }
    }

    pub const fn at(self, offset: usize) -> Self {
        View { offset, ..self }
    }

    pub const fn with_row_stride(self, row_stride: usize) -> Self {
        View { row_stride, ..self }
    }

    /// One past the last element touched.
    fn end(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            self.offset
        } else {
            self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride + 1
        }
    }
}

/// `c = alpha * a * b + beta * c`. With `beta == 0` the prior contents of `c` are ignored.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    alpha: f64,
    a: &[f64],
    av: View,
    b: &[f64],
    bv: View,
    beta: f64,
    c: &mut [f64],
    cv: View,
) {
    assert_eq!(av.cols, bv.rows, "gemm inner dimension");
    assert_eq!(av.rows, cv.rows, "gemm output rows");
    assert_eq!(bv.cols, cv.cols, "gemm output cols");
    assert!(
        av.end() <= a.len() && bv.end() <= b.len() && cv.end() <= c.len(),
        "gemm view out of bounds"
    );
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    if av.cols == 0 {
        // nothing to multiply; c = beta * c
        for i in 0..cv.rows {
            for j in 0..cv.cols {
                let idx = cv.offset + i * cv.row_stride + j * cv.col_stride;
                c[idx] = if beta == 0.0 { 0.0 } else { beta * c[idx] };
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked against its slice above, and `c`
    // is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            av.rows,
            av.cols,
            bv.cols,
            alpha,
            a.as_ptr().add(av.offset),
            av.row_stride as isize,
            av.col_stride as isize,
            b.as_ptr().add(bv.offset),
            bv.row_stride as isize,
            bv.col_stride as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.row_stride as isize,
            cv.col_stride as isize,
        );
    }
}

/// Row-major `c[m x n] (+)= a[m x k] * b[k x n]`.
pub fn matmul(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, accumulate: bool) {
    gemm(
        1.0,
        a,
        View::row_major(m, k),
        b,
        View::row_major(k, n),
        if accumulate { 1.0 } else { 0.0 },
        c,
        View::row_major(m, n),
    );
}

/// `c[m x n] (+)= a^T * b` for row-major `a[k x m]`, `b[k x n]`.
pub fn matmul_at_b(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    gemm(
        1.0,
        a,
        View::row_major(k, m).t(),
        b,
        View::row_major(k, n),
        if accumulate { 1.0 } else { 0.0 },
        c,
        View::row_major(m, n),
    );
}

/// `c[m x n] (+)= a * b^T` for row-major `a[m x k]`, `b[n x k]`.
pub fn matmul_a_bt(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    gemm(
        1.0,
        a,
        View::row_major(m, k),
        b,
        View::row_major(n, k).t(),
        if accumulate { 1.0 } else { 0.0 },
        c,
        View::row_major(m, n),
    );
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    if x.abs() > 19.0 {
        return x.signum();
    }
    let e = (2.0 * x).exp_m1();
    e / (e + 2.0)
}
