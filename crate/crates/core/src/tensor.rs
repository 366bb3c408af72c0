//! Dense tensors and the packed symmetric matrix type.
//!
//! Values are logically 32-bit: a tensor in [`Precision::Single`] mode only
//! ever holds numbers that are exactly representable as `f32`. Arithmetic and
//! reductions always run in 64-bit and results are rounded back to the
//! tensor's storage precision on write. Switching a tensor to
//! [`Precision::Double`] disables the rounding, which is what the gradient
//! checker uses.

use crate::error::{Error, Result};

/// Storage precision of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// Values are rounded through `f32` on every write (the default).
    #[default]
    Single,
    /// Full 64-bit values; used for finite-difference verification.
    Double,
}

impl Precision {
    /// Combined precision of an operation over two operands.
    pub fn join(self, other: Precision) -> Precision {
        if self == Precision::Double || other == Precision::Double {
            Precision::Double
        } else {
            Precision::Single
        }
    }

    /// Round `x` to this precision.
    #[inline]
    pub fn store(self, x: f64) -> f64 {
        match self {
            Precision::Single => x as f32 as f64,
            Precision::Double => x,
        }
    }
}

/// Dense n-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    precision: Precision,
}

impl Tensor {
    /// Build a tensor from a flat row-major buffer.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        Tensor::with_precision(shape, data, Precision::Single)
    }

    /// Build a tensor with an explicit storage precision.
    pub fn with_precision(shape: Vec<usize>, mut data: Vec<f64>, precision: Precision) -> Result<Tensor> {
        if shape.is_empty() {
            return Err(Error::Shape("tensor rank must be >= 1".into()));
        }
        // A zero batch extent is allowed (vacuous batches flow through the
        // layer kernels); datasets, tiles, and parameters reject it at their
        // own boundaries.
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {n} elements, buffer has {}",
                data.len()
            )));
        }
        if precision == Precision::Single {
            for x in &mut data {
                *x = *x as f32 as f64;
            }
        }
        Ok(Tensor { shape, data, precision })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n], precision: Precision::Single }
    }

    pub fn zeros_with(shape: Vec<usize>, precision: Precision) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n], precision }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![value as f32 as f64; n], precision: Precision::Single }
    }

    /// Rank-2 identity.
    pub fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(vec![n, n]);
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

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row-major strides for the current shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    /// Element access for rank-2 tensors.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        let p = self.precision;
        self.data[i * self.shape[1] + j] = p.store(v);
    }

    /// Write a value, rounding to the tensor's precision.
    #[inline]
    pub fn store(&mut self, idx: usize, v: f64) {
        self.data[idx] = self.precision.store(v);
    }

    /// Reinterpret the flat buffer under a new shape with the same length.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.is_empty() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elems) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor { shape, data: self.data.clone(), precision: self.precision })
    }

    /// Convert to the given precision (rounding when narrowing).
    pub fn to_precision(&self, precision: Precision) -> Tensor {
        let data = self.data.iter().map(|&x| precision.store(x)).collect();
        Tensor { shape: self.shape.clone(), data, precision }
    }

    /// Elementwise map; the result keeps this tensor's precision.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let p = self.precision;
        let data = self.data.iter().map(|&x| p.store(f(x))).collect();
        Tensor { shape: self.shape.clone(), data, precision: p }
    }

    /// Frobenius norm, accumulated in 64-bit.
    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum::<f64>().sqrt()
    }

    /// Maximum absolute difference between two same-shaped tensors.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// C[i,k] = sum_j A[i,j] * B[j,k], accumulated in 64-bit.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Shape(format!(
            "matmul needs rank-2 operands, got {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, ka) = (a.shape[0], a.shape[1]);
    let (kb, n) = (b.shape[0], b.shape[1]);
    if ka != kb {
        return Err(Error::Shape(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let p = a.precision.join(b.precision);
    let mut out = Tensor::zeros_with(vec![m, n], p);
    for i in 0..m {
        let arow = &a.data[i * ka..(i + 1) * ka];
        for k in 0..n {
            let mut acc = 0.0f64;
            for (j, &av) in arow.iter().enumerate() {
                acc += av * b.data[j * n + k];
            }
            out.data[i * n + k] = p.store(acc);
        }
    }
    Ok(out)
}

/// Symmetric matrix stored as the packed lower triangle, always 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    order: usize,
    /// Row-major packed lower triangle: entry (i, j), i >= j, at i*(i+1)/2 + j.
    data: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(order: usize) -> Result<SymmetricMatrix> {
        if order == 0 {
            return Err(Error::Shape("symmetric matrix order must be >= 1".into()));
        }
        Ok(SymmetricMatrix { order, data: vec![0.0; order * (order + 1) / 2] })
    }

    pub fn identity(order: usize) -> Result<SymmetricMatrix> {
        let mut s = SymmetricMatrix::zeros(order)?;
        for i in 0..order {
            s.set(i, i, 1.0);
        }
        Ok(s)
    }

    /// Build from a full row-major buffer, checking symmetry.
    pub fn from_dense(order: usize, dense: &[f64]) -> Result<SymmetricMatrix> {
        if dense.len() != order * order {
            return Err(Error::Shape(format!(
                "dense buffer has {} elements, expected {}",
                dense.len(),
                order * order
            )));
        }
        let mut s = SymmetricMatrix::zeros(order)?;
        for i in 0..order {
            for j in 0..=i {
                let a = dense[i * order + j];
                let b = dense[j * order + i];
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Contract(format!(
                        "matrix not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
                s.set(i, j, a);
            }
        }
        Ok(s)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    fn packed(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= j);
        i * (i + 1) / 2 + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.data[self.packed(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let idx = self.packed(i, j);
        self.data[idx] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let idx = self.packed(i, j);
        self.data[idx] += v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.order).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.order {
            for j in 0..=i {
                let v = self.get(i, j);
                acc += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        acc.sqrt()
    }

    /// Expand to a full row-major `order x order` buffer.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.order;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.get(i, j);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }

    /// S + gamma * I, leaving self untouched.
    pub fn shifted(&self, gamma: f64) -> SymmetricMatrix {
        let mut s = self.clone();
        for i in 0..s.order {
            let v = s.get(i, i) + gamma;
            s.set(i, i, v);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_precision_quantizes() {
        let t = Tensor::from_vec(vec![2], vec![0.1, 1.0 / 3.0]).unwrap();
        assert_eq!(t.data()[0], 0.1f32 as f64);
        assert_eq!(t.data()[1], (1.0f32 / 3.0) as f64);
        let d = Tensor::with_precision(vec![1], vec![0.1], Precision::Double).unwrap();
        assert_eq!(d.data()[0], 0.1);
    }

    #[test]
    fn shape_invariants_enforced() {
        assert!(Tensor::from_vec(vec![], vec![]).is_err());
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0; 3]).is_err());
        // Vacuous batch is representable.
        assert!(Tensor::from_vec(vec![0, 3], vec![]).is_ok());
    }

    #[test]
    fn matmul_identity_passthrough() {
        let b = Tensor::from_vec(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let i3 = Tensor::identity(3);
        let c = matmul(&i3, &b).unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2],[3,4]] x [[0],[1]] = [[2],[4]]
        let a = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(vec![2, 1], vec![0.0, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_mismatch_is_shape_error() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![4, 2]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn packed_symmetric_roundtrip() {
        let mut s = SymmetricMatrix::zeros(3).unwrap();
        s.set(2, 0, 5.0);
        assert_eq!(s.get(0, 2), 5.0);
        assert_eq!(s.get(2, 0), 5.0);
        let d = s.to_dense();
        assert_eq!(d[2], 5.0);
        assert_eq!(d[6], 5.0);
        let back = SymmetricMatrix::from_dense(3, &d).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn from_dense_rejects_asymmetry() {
        let d = vec![1.0, 2.0, 0.0, 1.0];
        assert!(SymmetricMatrix::from_dense(2, &d).is_err());
    }
}
