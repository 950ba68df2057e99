//! Strided matrix multiply over flat row-major buffers.

/// A read-only strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> View<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        View {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn max_offset(&self) -> isize {
        (self.rows as isize - 1) * self.rs + (self.cols as isize - 1) * self.cs
    }
}

/// `out = alpha * a * b + beta * out` where `out` is addressed with strides
/// `(out_rs, out_cs)`.
pub(crate) fn gemm(
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    out: &mut [f64],
    out_rs: isize,
    out_cs: isize,
) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.rs >= 0 && a.cs >= 0 && b.rs >= 0 && b.cs >= 0 && out_rs >= 0 && out_cs >= 0);
    assert!(k == 0 || (a.max_offset() as usize) < a.data.len());
    assert!(k == 0 || (b.max_offset() as usize) < b.data.len());
    let out_max = (m as isize - 1) * out_rs + (n as isize - 1) * out_cs;
    assert!((out_max as usize) < out.len());
    // SAFETY: every index touched by dgemm lies within the bounds asserted
    // above, and `out` does not alias the inputs (it is a unique borrow).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            out.as_mut_ptr(),
            out_rs,
            out_cs,
        );
    }
}
