//! Tensor-level primitives. Each forward has a matching backward that
//! accumulates (`+=`) exact gradients into caller-provided tensors.

use super::kernels::{self, gemm, View, ViewMut};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn shape_err<T>(op: &'static str, detail: String) -> Result<T> {
    Err(Error::Shape { op, detail })
}

fn check_matrix<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => shape_err(op, format!("expected a matrix, got shape {s:?}")),
    }
}

/// `a [m x k] * b [k x n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = check_matrix("matmul", a)?;
    let (k2, n) = check_matrix("matmul", b)?;
    if k != k2 {
        return shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape()));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        T::one(),
        View::new(a.data(), m, k),
        View::new(b.data(), k, n),
        T::zero(),
        ViewMut::new(out.data_mut(), m, n),
    );
    out.check_finite("matmul")
}

/// Accumulates `da += dc * b^T` and `db += a^T * dc`.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dc: &Tensor<T>,
    da: &mut Tensor<T>,
    db: &mut Tensor<T>,
) -> Result<()> {
    let (m, k) = check_matrix("matmul_backward", a)?;
    let (_, n) = check_matrix("matmul_backward", b)?;
    if dc.shape() != [m, n] || da.shape() != a.shape() || db.shape() != b.shape() {
        return shape_err("matmul_backward", "gradient shapes do not match operands".into());
    }
    gemm(
        T::one(),
        View::new(dc.data(), m, n),
        View::new(b.data(), k, n).t(),
        T::one(),
        ViewMut::new(da.data_mut(), m, k),
    );
    gemm(
        T::one(),
        View::new(a.data(), m, k).t(),
        View::new(dc.data(), m, n),
        T::one(),
        ViewMut::new(db.data_mut(), k, n),
    );
    Ok(())
}

/// Adds the vector `b` to every row of `x`.
pub fn add_bias<T: Scalar>(x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = check_matrix("add_bias", x)?;
    if b.shape() != [n] {
        return shape_err("add_bias", format!("bias {:?} for {:?}", b.shape(), x.shape()));
    }
    let mut out = x.clone();
    kernels::add_rows(out.data_mut(), b.data());
    out.check_finite("add_bias")
}

/// `dx = dy` (returned) and `db += column sums of dy`.
pub fn add_bias_backward<T: Scalar>(dy: &Tensor<T>, db: &mut Tensor<T>) -> Result<Tensor<T>> {
    if db.shape() != [dy.cols()] {
        return shape_err("add_bias_backward", format!("{:?} vs {:?}", db.shape(), dy.shape()));
    }
    kernels::col_sums_into(dy.data(), db.data_mut());
    Ok(dy.clone())
}

fn map<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    map(x, kernels::sigmoid).check_finite("sigmoid")
}

/// Gradient through sigmoid given its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    zip_map("sigmoid_backward", y, dy, |y, g| g * y * (T::one() - y))
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    map(x, T::tanh).check_finite("tanh")
}

/// Gradient through tanh given its output `y`.
pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    zip_map("tanh_backward", y, dy, |y, g| g * (T::one() - y * y))
}

fn zip_map<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )?
    .check_finite(op)
}

/// Joins matrices with equal row counts side by side.
pub fn concat_cols<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape { op: "concat", detail: "no operands".into() })?;
    let rows = check_matrix("concat", first)?.0;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = check_matrix("concat", p)?;
        if r != rows {
            return shape_err("concat", format!("row counts {rows} and {r}"));
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::new(vec![rows, total], data)
}

/// Splits `dy` back into per-operand gradients.
pub fn concat_cols_backward<T: Scalar>(dy: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (rows, total) = check_matrix("concat_backward", dy)?;
    if widths.iter().sum::<usize>() != total {
        return shape_err("concat_backward", format!("widths {widths:?} vs {total} columns"));
    }
    let mut start = 0;
    widths
        .iter()
        .map(|&w| {
            let s = slice_cols(dy, start, start + w);
            start += w;
            s
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| {
            debug_assert!(v.iter().all(|t| t.rows() == rows));
            v
        })
}

/// Columns `start..end` of a matrix.
pub fn slice_cols<T: Scalar>(x: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
    let (rows, cols) = check_matrix("slice", x)?;
    if start >= end || end > cols {
        return shape_err("slice", format!("columns {start}..{end} of {cols}"));
    }
    let data = (0..rows).flat_map(|r| x.row(r)[start..end].iter().copied()).collect();
    Tensor::new(vec![rows, end - start], data)
}

/// Scatters `dy` into a zero matrix of `total` columns at `start..`.
pub fn slice_cols_backward<T: Scalar>(dy: &Tensor<T>, total: usize, start: usize) -> Result<Tensor<T>> {
    let (rows, w) = check_matrix("slice_backward", dy)?;
    if start + w > total {
        return shape_err("slice_backward", format!("{start}+{w} > {total}"));
    }
    let mut out = Tensor::zeros(&[rows, total]);
    for r in 0..rows {
        out.data_mut()[r * total + start..r * total + start + w].copy_from_slice(dy.row(r));
    }
    Ok(out)
}

/// Gathers rows of `table` by index.
pub fn embedding<T: Scalar>(table: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let (v, d) = check_matrix("embedding", table)?;
    if indices.is_empty() {
        return shape_err("embedding", "no indices".into());
    }
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        if i >= v {
            return Err(Error::IndexOutOfRange {
                op: "embedding",
                index: i,
                extent: v,
            });
        }
        data.extend_from_slice(table.row(i));
    }
    Tensor::new(vec![indices.len(), d], data)
}

/// `dtable[indices[r]] += dy[r]`.
pub fn embedding_backward<T: Scalar>(dy: &Tensor<T>, indices: &[usize], dtable: &mut Tensor<T>) -> Result<()> {
    let (v, d) = check_matrix("embedding_backward", dtable)?;
    if dy.shape() != [indices.len(), d] {
        return shape_err("embedding_backward", format!("{:?} for {} indices", dy.shape(), indices.len()));
    }
    for (r, &i) in indices.iter().enumerate() {
        if i >= v {
            return Err(Error::IndexOutOfRange {
                op: "embedding_backward",
                index: i,
                extent: v,
            });
        }
        kernels::axpy(T::one(), dy.row(r), &mut dtable.data_mut()[i * d..(i + 1) * d]);
    }
    Ok(())
}

pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = check_matrix("softmax", logits)?;
    let mut out = logits.clone();
    kernels::softmax_in_place(out.data_mut(), n);
    out.check_finite("softmax")
}

/// Mean softmax cross-entropy over rows whose target is not `ignore_index`.
#[derive(Clone, Debug)]
pub struct CrossEntropy<T> {
    pub loss: T,
    pub probs: Tensor<T>,
    /// Rows that contributed to the mean.
    pub count: usize,
}

pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    ignore_index: Option<usize>,
) -> Result<CrossEntropy<T>> {
    let (rows, n) = check_matrix("softmax_cross_entropy", logits)?;
    if targets.len() != rows {
        return shape_err("softmax_cross_entropy", format!("{} targets for {rows} rows", targets.len()));
    }
    let probs = softmax(logits)?;
    let mut total = T::zero();
    let mut count = 0;
    for (r, &t) in targets.iter().enumerate() {
        if Some(t) == ignore_index {
            continue;
        }
        if t >= n {
            return Err(Error::IndexOutOfRange {
                op: "softmax_cross_entropy",
                index: t,
                extent: n,
            });
        }
        total += log_softmax_at(logits.row(r), t);
        count += 1;
    }
    let loss = if count == 0 { T::zero() } else { -total / T::of(count as f64) };
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_cross_entropy".into()));
    }
    Ok(CrossEntropy { loss, probs, count })
}

/// `log softmax(row)[t]` computed with the max-shift.
pub fn log_softmax_at<T: Scalar>(row: &[T], t: usize) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    row[t] - max - sum.ln()
}

/// Gradient of the mean cross-entropy with respect to the logits.
pub fn softmax_cross_entropy_backward<T: Scalar>(
    ce: &CrossEntropy<T>,
    targets: &[usize],
    ignore_index: Option<usize>,
) -> Tensor<T> {
    let n = ce.probs.cols();
    let mut d = ce.probs.clone();
    let scale = if ce.count == 0 { T::zero() } else { T::one() / T::of(ce.count as f64) };
    for (r, &t) in targets.iter().enumerate() {
        let row = &mut d.data_mut()[r * n..(r + 1) * n];
        if Some(t) == ignore_index {
            row.iter_mut().for_each(|v| *v = T::zero());
            continue;
        }
        row[t] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax(&Tensor::<f64>::from_rows(&[&[0.0, 0.0, 0.0]]).unwrap()).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_31_way_cross_entropy_is_ln_31() {
        // -ln(1/31), evaluated independently.
        let expected = (31.0f64).ln();
        assert!((expected - 3.4340).abs() < 5e-5);
        let logits = Tensor::<f64>::zeros(&[1, 31]);
        let ce = softmax_cross_entropy(&logits, &[4], None).unwrap();
        assert!((ce.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn ignored_rows_do_not_count() {
        let logits = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[5.0, -3.0]]).unwrap();
        let ce = softmax_cross_entropy(&logits, &[1, 9], Some(9)).unwrap();
        assert_eq!(ce.count, 1);
        let d = softmax_cross_entropy_backward(&ce, &[1, 9], Some(9));
        assert_eq!(d.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn error_paths() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape { .. })));
        let table = Tensor::<f64>::zeros(&[4, 2]);
        assert!(matches!(
            embedding(&table, &[1, 4]),
            Err(Error::IndexOutOfRange { index: 4, extent: 4, .. })
        ));
        let big = Tensor::<f64>::from_rows(&[&[1e300, 1e300]]).unwrap();
        let huge = Tensor::<f64>::from_rows(&[&[1e300], &[1e300]]).unwrap();
        assert!(matches!(matmul(&big, &huge), Err(Error::NonFinite(_))));
        assert!(slice_cols(&a, 2, 2).is_err());
    }

    #[test]
    fn activations_at_zero() {
        let z = Tensor::<f64>::zeros(&[1, 1]);
        assert_eq!(sigmoid(&z).unwrap().data(), &[0.5]);
        assert_eq!(tanh(&z).unwrap().data(), &[0.0]);
    }
}
