//! Thin strided wrapper over `matrixmultiply::dgemm`.

/// Row-major matrix view with optional transpose.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    /// Stride between consecutive rows of the stored matrix.
    pub row_stride: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            row_stride: cols,
            transposed: false,
        }
    }

    pub fn strided(data: &'a [f64], rows: usize, cols: usize, row_stride: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            row_stride,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        let rs = self.row_stride as isize;
        if self.transposed {
            (1, rs)
        } else {
            (rs, 1)
        }
    }
}

/// `c = alpha * a * b + beta * c`, where `c` is row-major `[m, n]` with row stride `c_stride`.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64], c_stride: usize) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "inner dimensions differ");
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        let a_need = (a.rows.max(1) - 1) * a.row_stride + a.cols;
        let b_need = (b.rows.max(1) - 1) * b.row_stride + b.cols;
        assert!(a.data.len() >= a_need && b.data.len() >= b_need);
    }
    assert!(c.len() >= (m - 1) * c_stride + n);
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            c_stride as isize,
            1,
        );
    }
}
