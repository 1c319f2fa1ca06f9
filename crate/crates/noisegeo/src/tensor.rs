//! Dense row-major tensors of 64-bit floats.
//!
//! `Tensor` is the universal value carrier for the whole crate: latent
//! vectors, feature maps, Jacobians, parameter matrices. The kernel set is
//! deliberately small — exact IEEE-754 double arithmetic, no implicit
//! broadcasting except expansion of missing leading axes.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Shaped dense array of `f64`, row-major.
///
/// Invariant: `data.len() == shape.iter().product()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and a flat row-major buffer.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "buffer length {} does not match shape {:?} (needs {})",
                data.len(),
                shape,
                expected
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![1.0; n],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    /// 1-element tensor holding a scalar.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Flat vector tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major matrix from nested rows; all rows must be equally long.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("ragged rows in matrix literal"));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            shape: vec![r, c],
            data,
        })
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::invalid(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row-major 2-D accessor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    fn check_same_shape(&self, other: &Tensor, kernel: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(kernel, &self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "subtract")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "elementwise-multiply")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|a| a * factor).collect(),
        }
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape("matrix-multiply", &self.shape, &other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Matrix–vector product: `(m,k) × (k) -> (m)`.
    pub fn matvec(&self, v: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || v.rank() != 1 || self.shape[1] != v.shape[0] {
            return Err(Error::shape("matrix-vector", &self.shape, &v.shape));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            out[i] = row.iter().zip(&v.data).map(|(a, b)| a * b).sum();
        }
        Ok(Tensor {
            shape: vec![m],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid(format!(
                "transpose on rank-{} tensor",
                self.rank()
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Expands missing leading axes: a `(h,w)` tensor broadcast to `(c,h,w)`
    /// repeats the buffer `c` times. The target shape must end with the
    /// current shape.
    pub fn broadcast_to(&self, target: &[usize]) -> Result<Tensor> {
        if target.len() < self.rank() || !target.ends_with(&self.shape) {
            return Err(Error::shape("broadcast", &self.shape, target));
        }
        let copies: usize = target[..target.len() - self.rank()].iter().product();
        let mut data = Vec::with_capacity(copies * self.data.len());
        for _ in 0..copies {
            data.extend_from_slice(&self.data);
        }
        Ok(Tensor {
            shape: target.to_vec(),
            data,
        })
    }

    /// Same buffer, new shape; the element count must match.
    pub fn reshape(&self, target: impl Into<Vec<usize>>) -> Result<Tensor> {
        let target = target.into();
        let expected: usize = target.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &target));
        }
        Ok(Tensor {
            shape: target,
            data: self.data.clone(),
        })
    }

    /// Sums out one axis; the result drops that axis.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::invalid(format!(
                "reduce-sum axis {} out of range for shape {:?}",
                axis, self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let mid = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let src = &self.data[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        Ok(Tensor { shape, data: out })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.sum() / self.data.len() as f64
    }

    /// Euclidean (Frobenius) norm over all entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Index of the first entry attaining the maximum absolute value.
    pub fn argmax_abs(&self) -> usize {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (i, v) in self.data.iter().enumerate() {
            if v.abs() > best_val {
                best_val = v.abs();
                best = i;
            }
        }
        best
    }

    /// Maximum absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other, "max-abs-diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_multiply_matches_hand_values() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![3.0, 4.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[3.0, 8.0]);
    }

    #[test]
    fn matmul_identity_is_noop() {
        let m = Tensor::matrix(&[
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![5.0, -1.0],
        ])
        .unwrap();
        let out = Tensor::eye(3).matmul(&m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn norm_of_three_four_is_five() {
        assert_eq!(Tensor::vector(vec![3.0, 4.0]).norm(), 5.0);
    }

    #[test]
    fn reshape_preserves_buffer() {
        let t = Tensor::new([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.reshape([3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert_eq!(r.shape(), &[3, 2]);
    }

    #[test]
    fn broadcast_expands_leading_axis_only() {
        let hw = Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let chw = hw.broadcast_to(&[3, 2, 2]).unwrap();
        assert_eq!(chw.shape(), &[3, 2, 2]);
        assert_eq!(&chw.data()[4..8], hw.data());
        assert!(hw.broadcast_to(&[2, 3, 2]).is_err());
    }

    #[test]
    fn sum_axis_collapses_channels() {
        let t = Tensor::new([2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = t.sum_axis(0).unwrap();
        assert_eq!(s.shape(), &[1, 2]);
        assert_eq!(s.data(), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_names_kernel_and_shapes() {
        let a = Tensor::vector(vec![1.0]);
        let b = Tensor::vector(vec![1.0, 2.0]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("add"), "{err}");
        assert!(err.contains("[1]") && err.contains("[2]"), "{err}");
    }

    #[test]
    fn buffer_length_must_match_shape() {
        assert!(Tensor::new([2, 2], vec![0.0; 3]).is_err());
    }
}
