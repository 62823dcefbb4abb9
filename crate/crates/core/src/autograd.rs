//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value
//! and the handles of its inputs. [`Graph::backward`] walks the tape in
//! reverse creation order, which is a valid topological order because a
//! node can only reference nodes created before it.
//!
//! Broadcasting is limited to adding a bias row to every row of a matrix;
//! everything else requires matching shapes or an explicit reshape.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{self, gelu_grad, gelu_scalar, huber_scalar, Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    Reshape(Var),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, rstd: Vec<T> },
    Softmax { x: Var, mask: Option<Vec<bool>> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather { x: Var, index: Vec<usize> },
    Huber { pred: Var, target: Var, scale: T },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

pub struct Graph<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar output with respect to every tracked node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, numel: usize) -> Vec<T> {
        self.get(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); numel])
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, tracked });
        Var(nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].tracked)
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Untracked leaf (inputs, targets).
    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    /// Scalar value of a rank-0 or single-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.data()[0]
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            tensor::matmul(&n[a.0].value, &n[b.0].value)?
        };
        Ok(self.push(out, Op::MatMul(a, b), self.tracked(&[a, b])))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), self.tracked(&[a, b])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), self.tracked(&[a, b])))
    }

    fn zip(&self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let n = self.nodes.borrow();
        let (x, y) = (&n[a.0].value, &n[b.0].value);
        if x.shape() != y.shape() {
            return Err(Error::dim(format!("{what}: {:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data)
    }

    /// `x[m,n] + row[n]` for every row of `x`.
    pub fn add_row(&self, x: Var, row: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let (xv, rv) = (&n[x.0].value, &n[row.0].value);
            let (_, cols) = xv.dims2()?;
            if rv.numel() != cols {
                return Err(Error::dim(format!(
                    "add_row: row of {} vs matrix {:?}",
                    rv.numel(),
                    xv.shape()
                )));
            }
            let data = xv
                .data()
                .chunks_exact(cols)
                .flat_map(|r| r.iter().zip(rv.data()).map(|(&p, &q)| p + q))
                .collect();
            Tensor::new(xv.shape(), data)?
        };
        Ok(self.push(out, Op::AddRow(x, row), self.tracked(&[x, row])))
    }

    pub fn scale(&self, x: Var, c: T) -> Var {
        let out = {
            let n = self.nodes.borrow();
            let v = &n[x.0].value;
            Tensor::new(v.shape(), v.data().iter().map(|&p| p * c).collect()).expect("same shape")
        };
        self.push(out, Op::Scale(x, c), self.tracked(&[x]))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let out = tensor::transpose(&self.nodes.borrow()[x.0].value)?;
        Ok(self.push(out, Op::Transpose(x), self.tracked(&[x])))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.nodes.borrow()[x.0].value.reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), self.tracked(&[x])))
    }

    pub fn gelu(&self, x: Var) -> Var {
        let out = {
            let n = self.nodes.borrow();
            let v = &n[x.0].value;
            Tensor::new(v.shape(), v.data().iter().map(|&p| gelu_scalar(p)).collect()).expect("same shape")
        };
        self.push(out, Op::Gelu(x), self.tracked(&[x]))
    }

    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (out, rstd) = {
            let n = self.nodes.borrow();
            let (xv, g, b) = (&n[x.0].value, &n[gain.0].value, &n[bias.0].value);
            let (rows, cols) = xv.dims2()?;
            if g.numel() != cols || b.numel() != cols {
                return Err(Error::dim("layer_norm gain/bias must match the last axis"));
            }
            let (out, rstd) = tensor::layer_norm_fwd(xv.data(), g.data(), b.data(), rows, cols);
            (Tensor::new([rows, cols], out)?, rstd)
        };
        let tracked = self.tracked(&[x, gain, bias]);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, rstd }, tracked))
    }

    /// Row-wise softmax; with a mask, excluded positions get weight 0 and
    /// receive no gradient.
    pub fn softmax(&self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            match &mask {
                Some(m) => tensor::masked_softmax(&n[x.0].value, m)?,
                None => tensor::softmax(&n[x.0].value)?,
            }
        };
        Ok(self.push(out, Op::Softmax { x, mask }, self.tracked(&[x])))
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let v = &n[x.0].value;
            let (rows, cols) = v.dims2()?;
            if start + len > cols {
                return Err(Error::dim(format!("slice {start}..{} of {cols} columns", start + len)));
            }
            let data = v.data().chunks_exact(cols).flat_map(|r| r[start..start + len].iter().copied()).collect();
            Tensor::new([rows, len], data)?
        };
        Ok(self.push(out, Op::SliceCols { x, start }, self.tracked(&[x])))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let dims = parts.iter().map(|p| n[p.0].value.dims2()).collect::<Result<Vec<_>>>()?;
            let rows = dims.first().map(|d| d.0).ok_or_else(|| Error::dim("concat of nothing"))?;
            if dims.iter().any(|d| d.0 != rows) {
                return Err(Error::dim("concat_cols: row counts differ"));
            }
            let total: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (p, &(_, c)) in parts.iter().zip(&dims) {
                    data.extend_from_slice(&n[p.0].value.data()[r * c..(r + 1) * c]);
                }
            }
            Tensor::new([rows, total], data)?
        };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), self.tracked(parts)))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let dims = parts.iter().map(|p| n[p.0].value.dims2()).collect::<Result<Vec<_>>>()?;
            let cols = dims.first().map(|d| d.1).ok_or_else(|| Error::dim("concat of nothing"))?;
            if dims.iter().any(|d| d.1 != cols) {
                return Err(Error::dim("concat_rows: column counts differ"));
            }
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for p in parts {
                data.extend_from_slice(n[p.0].value.data());
            }
            Tensor::new([rows, cols], data)?
        };
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), self.tracked(parts)))
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`. Used for fixed layout
    /// permutations such as pixel shuffling.
    pub fn gather(&self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let v = &n[x.0].value;
            if let Some(&bad) = index.iter().find(|&&i| i >= v.numel()) {
                return Err(Error::dim(format!("gather index {bad} out of {}", v.numel())));
            }
            Tensor::new(shape, index.iter().map(|&i| v.data()[i]).collect())?
        };
        Ok(self.push(out, Op::Gather { x, index }, self.tracked(&[x])))
    }

    /// Mean Huber loss of `scale * (pred - target)`.
    pub fn huber(&self, pred: Var, target: Var, scale: T) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let (p, t) = (&n[pred.0].value, &n[target.0].value);
            if p.shape() != t.shape() {
                return Err(Error::dim(format!("huber: {:?} vs {:?}", p.shape(), t.shape())));
            }
            let total: T = p.data().iter().zip(t.data()).map(|(&a, &b)| huber_scalar(scale * (a - b))).sum();
            Tensor::scalar(total / T::from_f64(p.numel().max(1) as f64))
        };
        Ok(self.push(out, Op::Huber { pred, target, scale }, self.tracked(&[pred, target])))
    }

    pub fn sum(&self, x: Var) -> Var {
        let s = self.nodes.borrow()[x.0].value.data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), self.tracked(&[x]))
    }

    pub fn mean(&self, x: Var) -> Var {
        let (s, n) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            (v.data().iter().copied().sum::<T>(), v.numel().max(1))
        };
        self.push(Tensor::scalar(s / T::from_f64(n as f64)), Op::Mean(x), self.tracked(&[x]))
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[out.0].value.numel() != 1 {
            return Err(Error::dim("backward needs a single-element output"));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(vec![T::one()]);

        for i in (0..=out.0).rev() {
            let node = &nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |v: Var| &nodes[v.0].value;
            let tracked = |v: Var| nodes[v.0].tracked;
            let mut acc = |v: Var, contrib: Vec<T>| {
                if !nodes[v.0].tracked {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = val(*a).dims2()?;
                    let (_, n) = val(*b).dims2()?;
                    if tracked(*a) {
                        // dA = dC * B^T
                        let bt = tensor::transpose(val(*b))?;
                        let mut da = vec![T::zero(); m * k];
                        tensor::matmul_into(&g, bt.data(), &mut da, m, n, k);
                        acc(*a, da);
                    }
                    if tracked(*b) {
                        // dB = A^T * dC
                        let at = tensor::transpose(val(*a))?;
                        let mut db = vec![T::zero(); k * n];
                        tensor::matmul_into(at.data(), &g, &mut db, k, m, n);
                        acc(*b, db);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddRow(x, row) => {
                    let cols = val(*row).numel();
                    let mut dr = vec![T::zero(); cols];
                    for r in g.chunks_exact(cols) {
                        dr.iter_mut().zip(r).for_each(|(d, &v)| *d += v);
                    }
                    acc(*row, dr);
                    acc(*x, g);
                }
                Op::Mul(a, b) => {
                    let da = g.iter().zip(val(*b).data()).map(|(&d, &y)| d * y).collect();
                    let db = g.iter().zip(val(*a).data()).map(|(&d, &x)| d * x).collect();
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Scale(x, c) => acc(*x, g.iter().map(|&d| d * *c).collect()),
                Op::Transpose(x) => {
                    let (m, n) = val(*x).dims2()?;
                    let gt = Tensor::new([n, m], g)?;
                    acc(*x, tensor::transpose(&gt)?.into_data());
                }
                Op::Reshape(x) => acc(*x, g),
                Op::Gelu(x) => {
                    let dx = g.iter().zip(val(*x).data()).map(|(&d, &v)| d * gelu_grad(v)).collect();
                    acc(*x, dx);
                }
                Op::LayerNorm { x, gain, bias, rstd } => {
                    let xv = val(*x);
                    let gv = val(*gain).data();
                    let (rows, cols) = xv.dims2()?;
                    let nf = T::from_f64(cols as f64);
                    let mut dx = vec![T::zero(); rows * cols];
                    let mut dg = vec![T::zero(); cols];
                    let mut db = vec![T::zero(); cols];
                    let mut xhat = vec![T::zero(); cols];
                    let mut dxhat = vec![T::zero(); cols];
                    for r in 0..rows {
                        let row = &xv.data()[r * cols..(r + 1) * cols];
                        let mean = row.iter().copied().sum::<T>() / nf;
                        let dy = &g[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            xhat[c] = (row[c] - mean) * rstd[r];
                            dxhat[c] = dy[c] * gv[c];
                            dg[c] += dy[c] * xhat[c];
                            db[c] += dy[c];
                        }
                        let m1 = dxhat.iter().copied().sum::<T>() / nf;
                        let m2 = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / nf;
                        for c in 0..cols {
                            dx[r * cols + c] = rstd[r] * (dxhat[c] - m1 - xhat[c] * m2);
                        }
                    }
                    acc(*x, dx);
                    acc(*gain, dg);
                    acc(*bias, db);
                }
                Op::Softmax { x, mask } => {
                    let y = node.value.data();
                    let (_, cols) = node.value.dims2()?;
                    let mut dx = vec![T::zero(); y.len()];
                    for (r, (yr, gr)) in y.chunks_exact(cols).zip(g.chunks_exact(cols)).enumerate() {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for c in 0..cols {
                            let i = r * cols + c;
                            if mask.as_ref().is_none_or(|m| m[i]) {
                                dx[i] = yr[c] * (gr[c] - dot);
                            }
                        }
                    }
                    acc(*x, dx);
                }
                Op::SliceCols { x, start } => {
                    let (rows, cols) = val(*x).dims2()?;
                    let len = g.len() / rows.max(1);
                    let mut dx = vec![T::zero(); rows * cols];
                    for r in 0..rows {
                        dx[r * cols + start..r * cols + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    acc(*x, dx);
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = node.value.dims2()?;
                    let mut offset = 0;
                    for p in parts {
                        let (_, c) = val(*p).dims2()?;
                        let mut dp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        offset += c;
                        acc(*p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = val(*p).numel();
                        acc(*p, g[offset..offset + len].to_vec());
                        offset += len;
                    }
                }
                Op::Gather { x, index } => {
                    let mut dx = vec![T::zero(); val(*x).numel()];
                    for (&src, &d) in index.iter().zip(&g) {
                        dx[src] += d;
                    }
                    acc(*x, dx);
                }
                Op::Huber { pred, target, scale } => {
                    let (p, t) = (val(*pred).data(), val(*target).data());
                    let inv_n = T::one() / T::from_f64(p.len().max(1) as f64);
                    let dp: Vec<T> = p
                        .iter()
                        .zip(t)
                        .map(|(&a, &b)| {
                            let z = *scale * (a - b);
                            g[0] * *scale * z.max(-T::one()).min(T::one()) * inv_n
                        })
                        .collect();
                    if tracked(*target) {
                        acc(*target, dp.iter().map(|&v| -v).collect());
                    }
                    acc(*pred, dp);
                }
                Op::Sum(x) => acc(*x, vec![g[0]; val(*x).numel()]),
                Op::Mean(x) => {
                    let n = val(*x).numel().max(1);
                    acc(*x, vec![g[0] / T::from_f64(n as f64); n]);
                }
            }
        }
        Ok(Gradients { grads })
    }
}
