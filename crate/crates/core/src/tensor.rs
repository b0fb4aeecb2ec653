//! Dense row-major `f64` tensors and the forward kernels the tape records.
//!
//! Every kernel validates shapes up front and checks its output for
//! non-finite values before returning. Reductions take an axis and drop it
//! from the output shape; reducing the last remaining axis yields shape `[1]`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into (outer, extent, inner) strides.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        if numel(&shape) != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "tensor extents must be positive, got {shape:?}"
        );
        let n = numel(&shape);
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a `[rows, cols]` matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Element of a rank-2 tensor.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.shape[1..].iter().product::<usize>();
        &self.data[row * w..(row + 1) * w]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if numel(&shape) != self.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Rows `start..end` along axis 0.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        if start >= end || end > self.shape[0] {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{end} out of range for {:?}",
                self.shape
            )));
        }
        let w: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor {
            shape,
            data: self.data[start * w..end * w].to_vec(),
        })
    }

    /// Concatenates along axis 0; trailing extents must agree.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::shape("concat_rows", &first.shape, &p.shape));
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Tensor { shape, data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn checked(self, op: &'static str) -> Result<Tensor> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::InvalidArgument(format!(
            "{op}: expected rank {rank}, got shape {:?}",
            t.shape
        )));
    }
    Ok(())
}

fn expect_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::InvalidArgument(format!(
            "{op}: axis {axis} out of range for shape {:?}",
            t.shape
        )));
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(op, &a.shape, &b.shape));
    }
    Ok(())
}

fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    same_shape(op, a, b)?;
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
    .checked(op)
}

/// Kernels shared by the tape's forward and backward passes.
pub mod ops {
    use super::*;

    pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        expect_rank("matmul", a, 2)?;
        expect_rank("matmul", b, 2)?;
        let (m, k) = (a.shape[0], a.shape[1]);
        let (k2, n) = (b.shape[0], b.shape[1]);
        if k != k2 {
            return Err(Error::shape("matmul", &a.shape, &b.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm(&a.data, &b.data, &mut out, m, k, n);
        Tensor::new(vec![m, n], out)?.checked("matmul")
    }

    fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }

    /// Batched matmul: `[F, m, k] x [F, k, n] -> [F, m, n]`.
    pub fn bmm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        expect_rank("bmm", a, 3)?;
        expect_rank("bmm", b, 3)?;
        let (f, m, k) = (a.shape[0], a.shape[1], a.shape[2]);
        if b.shape[0] != f || b.shape[1] != k {
            return Err(Error::shape("bmm", &a.shape, &b.shape));
        }
        let n = b.shape[2];
        let mut out = vec![0.0; f * m * n];
        for fi in 0..f {
            gemm(
                &a.data[fi * m * k..(fi + 1) * m * k],
                &b.data[fi * k * n..(fi + 1) * k * n],
                &mut out[fi * m * n..(fi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Tensor::new(vec![f, m, n], out)?.checked("bmm")
    }

    pub fn transpose(a: &Tensor) -> Result<Tensor> {
        expect_rank("transpose", a, 2)?;
        permute(a, &[1, 0])
    }

    pub fn permute(a: &Tensor, perm: &[usize]) -> Result<Tensor> {
        let r = a.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument(format!(
                "permute: {perm:?} is not a permutation of {r} axes"
            )));
        }
        let shape: Vec<usize> = perm.iter().map(|&p| a.shape[p]).collect();
        let mut in_strides = vec![1; r];
        for i in (0..r.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * a.shape[i + 1];
        }
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(a.len());
        let mut idx = vec![0usize; r];
        for _ in 0..a.len() {
            let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            out.push(a.data[off]);
            for ax in (0..r).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Tensor::new(shape, out)
    }

    pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        zip_with("add", a, b, |x, y| x + y)
    }

    pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        zip_with("sub", a, b, |x, y| x - y)
    }

    pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        zip_with("mul", a, b, |x, y| x * y)
    }

    pub fn scale(a: &Tensor, c: f64) -> Result<Tensor> {
        a.map(|x| x * c).checked("scale")
    }

    /// Adds a `[C]` vector to every row of a tensor whose last extent is `C`.
    pub fn add_bias(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let c = *a.shape.last().unwrap();
        if bias.rank() != 1 || bias.shape[0] != c {
            return Err(Error::shape("add_bias", &a.shape, &bias.shape));
        }
        let mut out = a.clone();
        for row in out.data.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        out.checked("add_bias")
    }

    pub fn exp(a: &Tensor) -> Result<Tensor> {
        a.map(f64::exp).checked("exp")
    }

    pub fn log(a: &Tensor) -> Result<Tensor> {
        a.map(f64::ln).checked("log")
    }

    pub fn tanh(a: &Tensor) -> Result<Tensor> {
        a.map(f64::tanh).checked("tanh")
    }

    /// Softmax over the last axis. `mask` is additive and has the same shape;
    /// entries equal to `-inf` receive exactly zero probability.
    pub fn softmax(a: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        if let Some(m) = mask {
            same_shape("softmax", a, m)?;
        }
        let c = *a.shape.last().unwrap();
        let mut out = vec![0.0; a.len()];
        for (r, orow) in out.chunks_mut(c).enumerate() {
            let row = &a.data[r * c..(r + 1) * c];
            let shifted: Vec<f64> = match mask {
                Some(m) => row
                    .iter()
                    .zip(&m.data[r * c..(r + 1) * c])
                    .map(|(x, mk)| x + mk)
                    .collect(),
                None => row.to_vec(),
            };
            let max = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "softmax: row {r} is fully masked"
                )));
            }
            let mut sum = 0.0;
            for (o, &x) in orow.iter_mut().zip(&shifted) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        Tensor::new(a.shape.clone(), out)?.checked("softmax")
    }

    /// L2 normalization along the last axis; returns the output and the row
    /// norms. Zero rows stay zero.
    pub fn l2_normalize(a: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let c = *a.shape.last().unwrap();
        let mut out = a.clone();
        let mut norms = Vec::with_capacity(a.len() / c);
        for row in out.data.chunks_mut(c) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
            norms.push(n);
        }
        Ok((out.checked("l2_normalize")?, norms))
    }

    pub const LAYER_NORM_EPS: f64 = 1e-5;

    /// Layer normalization along the last axis. Returns the output, the
    /// normalized pre-affine values and the per-row inverse standard deviation.
    pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
        let c = *x.shape.last().unwrap();
        if gain.shape != [c] || bias.shape != [c] {
            return Err(Error::shape("layer_norm", &x.shape, &gain.shape));
        }
        let mut xhat = x.clone();
        let mut inv_stds = Vec::with_capacity(x.len() / c);
        for row in xhat.data.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_stds.push(inv);
        }
        let mut out = xhat.clone();
        for row in out.data.chunks_mut(c) {
            for ((o, g), b) in row.iter_mut().zip(&gain.data).zip(&bias.data) {
                *o = *o * g + b;
            }
        }
        Ok((out.checked("layer_norm")?, xhat, inv_stds))
    }

    pub fn sum_axis(a: &Tensor, axis: usize) -> Result<Tensor> {
        expect_axis("sum", a, axis)?;
        let (outer, n, inner) = split_axis(&a.shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                for i in 0..inner {
                    out[o * inner + i] += a.data[base + i];
                }
            }
        }
        Tensor::new(reduced_shape(&a.shape, axis), out)?.checked("sum")
    }

    pub fn mean_axis(a: &Tensor, axis: usize) -> Result<Tensor> {
        expect_axis("mean", a, axis)?;
        let n = a.shape[axis] as f64;
        Ok(sum_axis(a, axis)?.map(|x| x / n))
    }

    pub fn sum_all(a: &Tensor) -> Result<Tensor> {
        Tensor::scalar(a.data.iter().sum()).checked("sum_all")
    }

    /// Index of the maximum along `axis` for each (outer, inner) position,
    /// lowest index on ties. `valid`, when given, has `outer * extent` entries
    /// and excludes positions from consideration (broadcast over inner).
    pub fn argmax_axis(a: &Tensor, axis: usize, valid: Option<&[bool]>) -> Result<Vec<usize>> {
        expect_axis("argmax", a, axis)?;
        let (outer, n, inner) = split_axis(&a.shape, axis);
        if let Some(v) = valid {
            if v.len() != outer * n {
                return Err(Error::shape("argmax mask", &a.shape, &[v.len()]));
            }
        }
        let mut idx = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best: Option<(usize, f64)> = None;
                for j in 0..n {
                    if valid.is_some_and(|v| !v[o * n + j]) {
                        continue;
                    }
                    let x = a.data[(o * n + j) * inner + i];
                    if best.is_none_or(|(_, b)| x > b) {
                        best = Some((j, x));
                    }
                }
                idx[o * inner + i] = best
                    .ok_or_else(|| Error::InvalidArgument(format!("argmax: outer slice {o} fully masked")))?
                    .0;
            }
        }
        Ok(idx)
    }

    /// Values at the given per-position indices along `axis`.
    pub fn take_along(a: &Tensor, axis: usize, idx: &[usize]) -> Result<Tensor> {
        let (outer, n, inner) = split_axis(&a.shape, axis);
        if idx.len() != outer * inner || idx.iter().any(|&j| j >= n) {
            return Err(Error::InvalidArgument("take_along: bad index list".into()));
        }
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let j = idx[o * inner + i];
                out[o * inner + i] = a.data[(o * n + j) * inner + i];
            }
        }
        Tensor::new(reduced_shape(&a.shape, axis), out)
    }

    pub fn max_axis(a: &Tensor, axis: usize) -> Result<Tensor> {
        let idx = argmax_axis(a, axis, None)?;
        take_along(a, axis, &idx)
    }

    /// Numerically stable log-sum-exp along `axis`.
    pub fn logsumexp_axis(a: &Tensor, axis: usize) -> Result<Tensor> {
        expect_axis("logsumexp", a, axis)?;
        let (outer, n, inner) = split_axis(&a.shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| a.data[(o * n + j) * inner + i];
                let max = (0..n).map(at).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..n).map(|j| (at(j) - max).exp()).sum();
                out[o * inner + i] = max + s.ln();
            }
        }
        Tensor::new(reduced_shape(&a.shape, axis), out)?.checked("logsumexp")
    }

    pub fn diagonal(a: &Tensor) -> Result<Tensor> {
        expect_rank("diagonal", a, 2)?;
        if a.shape[0] != a.shape[1] {
            return Err(Error::shape("diagonal", &a.shape, &[a.shape[1], a.shape[0]]));
        }
        let n = a.shape[0];
        Ok(Tensor::from_vec((0..n).map(|i| a.data[i * n + i]).collect()))
    }

    /// Rows of `a` (along axis 0) in the order given by `idx`.
    pub fn gather_rows(a: &Tensor, idx: &[usize]) -> Result<Tensor> {
        let rows = a.shape[0];
        if idx.is_empty() || idx.iter().any(|&i| i >= rows) {
            return Err(Error::InvalidArgument(format!(
                "gather_rows: index out of range for {} rows",
                rows
            )));
        }
        let w: usize = a.shape[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(&a.data[i * w..(i + 1) * w]);
        }
        let mut shape = a.shape.clone();
        shape[0] = idx.len();
        Tensor::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::ops::*;
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let s = softmax(&Tensor::from_vec(vec![0.0; 3]), None).unwrap();
        assert!(close(s.data(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn l2_normalize_345() {
        let (n, norms) = l2_normalize(&Tensor::from_vec(vec![3.0, 4.0])).unwrap();
        assert!(close(n.data(), &[0.6, 0.8], 1e-15));
        assert_eq!(norms, vec![5.0]);
    }

    #[test]
    fn l2_normalize_zero_row_stays_zero() {
        let t = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let (n, _) = l2_normalize(&t).unwrap();
        assert_eq!(n.row(0), &[0.0, 0.0]);
        let r1 = n.row(1);
        assert!(((r1[0] * r1[0] + r1[1] * r1[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_matmul() {
        let a = Tensor::new(vec![3, 2], vec![1.0, -2.0, 3.5, 0.25, 7.0, 9.0]).unwrap();
        assert_eq!(matmul(&Tensor::eye(3), &a).unwrap(), a);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(vec![2, 3]), &Tensor::zeros(vec![2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let err = exp(&Tensor::from_vec(vec![1000.0])).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "exp" }));
        assert!(log(&Tensor::from_vec(vec![0.0])).is_err());
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let x = Tensor::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let m = Tensor::from_vec(vec![0.0, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]);
        let s = softmax(&x, Some(&m)).unwrap();
        assert_eq!(s.data()[1], 0.0);
        assert_eq!(s.data()[3], 0.0);
        assert!((s.data()[0] + s.data()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_row_is_rejected() {
        let x = Tensor::from_vec(vec![0.0, 0.0]);
        let m = Tensor::from_vec(vec![f64::NEG_INFINITY; 2]);
        assert!(softmax(&x, Some(&m)).is_err());
    }

    #[test]
    fn reductions_along_axes() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 5.0, 2.0, 4.0, 0.0, 6.0]).unwrap();
        assert_eq!(sum_axis(&t, 0).unwrap().data(), &[5.0, 5.0, 8.0]);
        assert_eq!(sum_axis(&t, 1).unwrap().data(), &[8.0, 10.0]);
        assert_eq!(mean_axis(&t, 1).unwrap().data(), &[8.0 / 3.0, 10.0 / 3.0]);
        assert_eq!(max_axis(&t, 1).unwrap().data(), &[5.0, 6.0]);
        assert_eq!(argmax_axis(&t, 0, None).unwrap(), vec![1, 0, 1]);
        assert_eq!(sum_all(&t).unwrap().item(), 18.0);
    }

    #[test]
    fn argmax_ties_take_lowest_index_and_respect_mask() {
        let t = Tensor::new(vec![1, 3], vec![2.0, 2.0, 9.0]).unwrap();
        assert_eq!(argmax_axis(&t, 1, Some(&[true, true, false])).unwrap(), vec![0]);
    }

    #[test]
    fn permute_roundtrip() {
        let t = Tensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let p = permute(&t, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        // element (a,b,c) of t lands at (c,a,b)
        assert_eq!(p.data()[3 * 6 + 5], t.data()[23]);
        let back = permute(&p, &[1, 2, 0]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0]).unwrap();
        let (y, _, _) = layer_norm(&x, &Tensor::full(vec![4], 1.0), &Tensor::zeros(vec![4])).unwrap();
        for r in 0..2 {
            let row = y.row(r);
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn logsumexp_is_stable() {
        let t = Tensor::from_vec(vec![1000.0, 1000.0]);
        let l = logsumexp_axis(&t, 0).unwrap();
        assert!((l.item() - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn gather_and_diagonal() {
        let t = Tensor::new(vec![3, 3], (0..9).map(f64::from).collect()).unwrap();
        assert_eq!(diagonal(&t).unwrap().data(), &[0.0, 4.0, 8.0]);
        assert_eq!(gather_rows(&t, &[2, 0]).unwrap().data(), &[6.0, 7.0, 8.0, 0.0, 1.0, 2.0]);
    }
}
