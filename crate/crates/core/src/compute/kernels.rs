//! Slice-level kernels shared by the tensor primitives and the recurrent
//! layers: strided matrix views, GEMM, and the scalar activations.

use super::Scalar;

/// Read-only strided matrix view.
#[derive(Clone, Copy, Debug)]
pub struct View<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T: Scalar> View<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a [T], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        let v = Self {
            data,
            rows,
            cols,
            rs,
            cs,
        };
        assert!(v.fits(), "view {rows}x{cols} (rs {rs}, cs {cs}) exceeds buffer of {}", data.len());
        v
    }

    fn fits(&self) -> bool {
        self.rows == 0 || self.cols == 0 || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    /// Columns `start..end` of this view.
    pub fn cols(self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols);
        let offset = if self.rows == 0 || start == end { 0 } else { start * self.cs };
        Self::strided(&self.data[offset..], self.rows, end - start, self.rs, self.cs)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.rs + c * self.cs]
    }
}

/// Mutable strided matrix view.
#[derive(Debug)]
pub struct ViewMut<'a, T> {
    pub data: &'a mut [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T: Scalar> ViewMut<'a, T> {
    pub fn new(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a mut [T], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        assert!(
            rows == 0 || cols == 0 || (rows - 1) * rs + (cols - 1) * cs < data.len(),
            "mutable view {rows}x{cols} exceeds buffer of {}",
            data.len()
        );
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn cols(self, start: usize, end: usize) -> ViewMut<'a, T> {
        assert!(start <= end && end <= self.cols);
        let offset = if self.rows == 0 || start == end { 0 } else { start * self.cs };
        let (rows, rs, cs) = (self.rows, self.rs, self.cs);
        ViewMut::strided(&mut self.data[offset..], rows, end - start, rs, cs)
    }
}

/// `c = alpha * a * b + beta * c`. With `beta == 0` the previous contents of
/// `c` are ignored.
pub fn gemm<T: Scalar>(alpha: T, a: View<T>, b: View<T>, beta: T, c: ViewMut<T>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        scale_view(beta, c);
        return;
    }
    // Very short left operands (single-sequence inference) skip the packing
    // step of the blocked kernel.
    if m <= 2 && b.cs == 1 && c.cs == 1 {
        for i in 0..m {
            let row = &mut c.data[i * c.rs..i * c.rs + n];
            if beta == T::zero() {
                row.iter_mut().for_each(|v| *v = T::zero());
            } else if beta != T::one() {
                row.iter_mut().for_each(|v| *v *= beta);
            }
            for p in 0..k {
                let s = alpha * a.at(i, p);
                let brow = &b.data[p * b.rs..p * b.rs + n];
                axpy(s, brow, row);
            }
        }
        return;
    }
    // SAFETY: both views were bounds-checked on construction and `c` is a
    // distinct mutable borrow.
    unsafe {
        T::gemm_raw(
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
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

fn scale_view<T: Scalar>(beta: T, c: ViewMut<T>) {
    for i in 0..c.rows {
        for j in 0..c.cols {
            let v = &mut c.data[i * c.rs + j * c.cs];
            *v = if beta == T::zero() { T::zero() } else { *v * beta };
        }
    }
}

#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Adds `bias` to every row of the row-major `[rows x bias.len()]` buffer.
pub fn add_rows<T: Scalar>(data: &mut [T], bias: &[T]) {
    for row in data.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Accumulates column sums of a row-major `[rows x out.len()]` buffer.
pub fn col_sums_into<T: Scalar>(data: &[T], out: &mut [T]) {
    for row in data.chunks_exact(out.len()) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Row-wise numerically stable softmax in place.
pub fn softmax_in_place<T: Scalar>(data: &mut [T], width: usize) {
    for row in data.chunks_exact_mut(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// Index of the largest entry, ties going to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
