//! Dense row-major tensors and the forward kernels shared by the autodiff
//! graph and by direct (graph-free) callers.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of a tensor. The model runs in `f32`; `f64` exists for the
/// finite-difference shadow evaluation in [`crate::gradcheck`].
pub trait Scalar: Float + Default + Debug + Sum + AddAssign + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![v; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// (rows, cols) of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(format!("expected rank-2 tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(Scalar::to_f64(*v))).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![T::zero(); m * n];
    matmul_into(&a.data, &b.data, &mut out, m, k, n);
    Tensor::new([m, n], out)
}

/// out[m,n] += a[m,k] * b[k,n]
pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = a.dims2()?;
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new([n, m], out)
}

/// Row-wise softmax over the last axis of a rank-2 tensor where positions
/// with `mask == false` are excluded from the normalization and receive a
/// weight of exactly zero. Logits at masked positions are never read.
pub fn masked_softmax<T: Scalar>(logits: &Tensor<T>, mask: &[bool]) -> Result<Tensor<T>> {
    let (rows, cols) = logits.dims2()?;
    if mask.len() != rows * cols {
        return Err(Error::dim(format!(
            "mask has {} entries, logits are {}x{}",
            mask.len(),
            rows,
            cols
        )));
    }
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let span = r * cols..(r + 1) * cols;
        softmax_row(&logits.data[span.clone()], Some(&mask[span.clone()]), &mut out[span])
            .map_err(|_| Error::contract(format!("attention row {r} has no unmasked entry")))?;
    }
    Tensor::new([rows, cols], out)
}

pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = logits.dims2()?;
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let span = r * cols..(r + 1) * cols;
        softmax_row(&logits.data[span.clone()], None, &mut out[span])
            .map_err(|_| Error::contract("softmax over an empty row"))?;
    }
    Tensor::new([rows, cols], out)
}

pub(crate) fn softmax_row<T: Scalar>(x: &[T], mask: Option<&[bool]>, out: &mut [T]) -> Result<(), ()> {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let mut max = T::neg_infinity();
    let mut any = false;
    for (j, &v) in x.iter().enumerate() {
        if keep(j) {
            any = true;
            if v > max {
                max = v;
            }
        }
    }
    if !any {
        return Err(());
    }
    let mut sum = T::zero();
    for (j, &v) in x.iter().enumerate() {
        if keep(j) {
            let e = (v - max).exp();
            out[j] = e;
            sum += e;
        } else {
            out[j] = T::zero();
        }
    }
    let inv = T::one() / sum;
    for (j, o) in out.iter_mut().enumerate() {
        if keep(j) {
            *o = *o * inv;
        }
    }
    Ok(())
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Normalizes each row of `x` (last axis) to zero mean and unit variance,
/// then applies `gain` and `bias`. Returns the output and the per-row
/// reciprocal standard deviation.
pub(crate) fn layer_norm_fwd<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    rows: usize,
    cols: usize,
) -> (Vec<T>, Vec<T>) {
    let eps = T::from_f64(LAYER_NORM_EPS);
    let n = T::from_f64(cols as f64);
    let mut out = vec![T::zero(); rows * cols];
    let mut rstds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + eps).sqrt();
        rstds.push(rstd);
        for c in 0..cols {
            out[r * cols + c] = (row[c] - mean) * rstd * gain[c] + bias[c];
        }
    }
    (out, rstds)
}

pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = x.dims2()?;
    if gain.numel() != cols || bias.numel() != cols {
        return Err(Error::dim("layer_norm gain/bias must match the last axis"));
    }
    let (out, _) = layer_norm_fwd(&x.data, &gain.data, &bias.data, rows, cols);
    Tensor::new([rows, cols], out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let inner = T::from_f64(GELU_C) * (x + T::from_f64(GELU_A) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::from_f64(3.0) * a * x * x)
}

/// Elementwise Huber value of an already scaled residual.
#[inline]
pub fn huber_scalar<T: Scalar>(z: T) -> T {
    let az = z.abs();
    if az < T::one() {
        T::from_f64(0.5) * z * z
    } else {
        az - T::from_f64(0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_small() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[1., 1.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3., 7.]);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        assert_eq!(matmul(&eye, &a).unwrap(), a);
        assert!(matmul(&a, &t(&[3, 1], &[1., 1., 1.])).is_err());
    }

    #[test]
    fn masked_softmax_cases() {
        let l = t(&[1, 3], &[1., 1., 1.]);
        let y = masked_softmax(&l, &[true, true, true]).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let y = masked_softmax(&l, &[true, false, true]).unwrap();
        assert_eq!(y.data(), &[0.5, 0.0, 0.5]);
        let y = masked_softmax(&t(&[1, 3], &[5., 0., 0.]), &[false, true, true]).unwrap();
        assert_eq!(y.data(), &[0.0, 0.5, 0.5]);
        let err = masked_softmax(&l, &[false, false, false]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn gelu_and_layer_norm_basics() {
        assert_eq!(gelu_scalar(0.0f32), 0.0);
        let x = t(&[1, 4], &[3., 3., 3., 3.]);
        let y = layer_norm(&x, &Tensor::full([4], 1.0), &Tensor::zeros([4])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn huber_pieces() {
        assert_eq!(huber_scalar(0.0f64), 0.0);
        assert_eq!(huber_scalar(0.5f64), 0.125);
        assert_eq!(huber_scalar(2.0f64), 1.5);
        assert_eq!(huber_scalar(-2.0f64), 1.5);
    }
}
