//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in execution order. Leaves may
//! borrow their storage (model parameters) so that building a graph per
//! training sample does not copy the parameter set. [`Tape::backward`]
//! walks the record in exact reverse order and returns the gradients of
//! every leaf that requires one.

use std::borrow::Cow;

use rand::Rng;

use super::kernels::{axis_split, matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_slices};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type Derivative<'a, T> = Box<dyn Fn(T) -> T + 'a>;

enum Op<'a, T> {
    Leaf,
    Matmul(Var, Var),
    MatmulNt(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Map(Var, Derivative<'a, T>),
    Softmax { x: Var, outer: usize, n: usize, inner: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T>, supervised: Vec<bool>, count: usize },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { parts: Vec<Var>, outer: usize, inner: usize, extents: Vec<usize> },
    Slice { x: Var, outer: usize, inner: usize, extent: usize, start: usize, len: usize },
    SumAxis { x: Var, outer: usize, n: usize, inner: usize },
    Sum(Var),
    GatherRows { x: Var, idx: Vec<usize> },
    ScatterAddRows { x: Var, idx: Vec<usize> },
    RepeatRows(Var),
    Dropout { x: Var, mask: Vec<T> },
}

struct Node<'a, T: Clone> {
    value: Cow<'a, [T]>,
    shape: Vec<usize>,
    op: Op<'a, T>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    backpropagated: bool,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256), backpropagated: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears the record so the tape can be reused for a new graph.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backpropagated = false;
    }

    fn push(&mut self, value: Cow<'a, [T]>, shape: Vec<usize>, op: Op<'a, T>, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { value, shape, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Tape(format!("variable {} is not on this tape", v.0)))
        }
    }

    /// Records a borrowed leaf; it takes part in differentiation when the
    /// tensor has `requires_grad` set.
    pub fn leaf(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t.data()), t.shape().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a borrowed leaf that never receives a gradient.
    pub fn leaf_frozen(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t.data()), t.shape().to_vec(), Op::Leaf, false)
    }

    /// Records an owned leaf, honouring its `requires_grad` flag.
    pub fn insert(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        let shape = t.shape().to_vec();
        self.push(Cow::Owned(t.into_data()), shape, Op::Leaf, rg)
    }

    /// Records an owned leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(Cow::Owned(t.into_data()), shape, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node invariant")
    }

    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dimensions {k} and {k2} disagree")));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), vec![m, n], Op::Matmul(a, b), rg))
    }

    /// `a * b^T` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("inner dimensions {k} and {k2} disagree")));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), vec![m, n], Op::MatmulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let (m, n) = self.dims2(a, "transpose")?;
        let x = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Cow::Owned(out), vec![n, m], Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::shape("reshape", format!("{:?} -> {:?}", self.shape(a), shape)));
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(Cow::Owned(out), shape.to_vec(), Op::Reshape(a), rg))
    }

    // ---- elementwise ----------------------------------------------------

    fn zip_with(&mut self, a: Var, b: Var, op_name: &'static str, f: impl Fn(T, T) -> T, op: Op<'a, T>) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape(a, b, op_name)?;
        let out: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Cow::Owned(out), shape, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.check(a)?;
        let out: Vec<T> = self.value(a).iter().map(|&x| x * s).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Cow::Owned(out), shape, Op::Scale(a, s), rg))
    }

    /// Adds a `d`-vector to every trailing `d`-slice of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let d = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [d] {
            return Err(Error::shape("add_bias", format!("bias {:?} vs trailing extent {d}", self.shape(bias))));
        }
        let b = self.value(bias);
        let out: Vec<T> = self.value(x).chunks(d).flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c)).collect();
        let rg = self.rg(x) || self.rg(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(Cow::Owned(out), shape, Op::AddBias(x, bias), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<'a, T>) -> Result<Var> {
        self.check(a)?;
        let out: Vec<T> = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Cow::Owned(out), shape, op, rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    /// Elementwise map with a caller-supplied derivative `df(x)`.
    pub fn map(&mut self, a: Var, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'a) -> Result<Var> {
        self.unary(a, f, Op::Map(a, Box::new(df)))
    }

    // ---- normalisation --------------------------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, None)
    }

    /// Softmax over the last axis where `mask[i] == false` entries are
    /// treated as `-inf` logits. A slice with no allowed entry is an error.
    pub fn softmax_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let axis = self.shape(x).len().saturating_sub(1);
        if mask.len() != self.value(x).len() {
            return Err(Error::shape("softmax_masked", format!("mask length {} vs {}", mask.len(), self.value(x).len())));
        }
        self.softmax_impl(x, axis, Some(mask))
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let mut out = vec![T::zero(); self.value(x).len()];
        if !softmax_slices(self.value(x), &mut out, outer, n, inner, mask) {
            return Err(Error::Tape("softmax slice has no admissible entry (fully masked or non-finite)".into()));
        }
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), shape, Op::Softmax { x, outer, n, inner }, rg))
    }

    /// Normalises each trailing `d`-slice to zero mean and unit variance,
    /// then applies `gain * xhat + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        self.check(x)?;
        let d = *self.shape(x).last().unwrap_or(&0);
        if d == 0 {
            return Err(Error::shape("layer_norm", "trailing extent must be at least 1"));
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape("layer_norm", format!("gain/bias must have shape [{d}]")));
        }
        let n = T::of(d as f64);
        let xs = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let rows = xs.len() / d;
        let mut out = vec![T::zero(); xs.len()];
        let mut xhat = vec![T::zero(); xs.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = (var + eps).sqrt().recip();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(Cow::Owned(out), shape, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits[T x V]`, skipping positions equal to `pad_id`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad_id: Option<usize>) -> Result<Var> {
        self.check(logits)?;
        let (t, v) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != t {
            return Err(Error::shape("cross_entropy", format!("{} targets for {t} positions", targets.len())));
        }
        let supervised: Vec<bool> = targets.iter().map(|&id| Some(id) != pad_id).collect();
        for (&id, &sup) in targets.iter().zip(&supervised) {
            if sup && id >= v {
                return Err(Error::index("cross_entropy", format!("target {id} outside vocabulary of {v}")));
            }
        }
        let count = supervised.iter().filter(|&&s| s).count();
        if count == 0 {
            return Err(Error::Tape("cross_entropy has no supervised positions (all targets are padding)".into()));
        }
        let mut probs = vec![T::zero(); t * v];
        softmax_slices(self.value(logits), &mut probs, t, v, 1, None);
        let xs = self.value(logits);
        let mut total = T::zero();
        for r in 0..t {
            if !supervised[r] {
                continue;
            }
            let row = &xs[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            total += lse - row[targets[r]];
        }
        let loss = total / T::of(count as f64);
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross_entropy"));
        }
        let rg = self.rg(logits);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs, supervised, count };
        Ok(self.push(Cow::Owned(vec![loss]), Vec::new(), op, rg))
    }

    // ---- indexing and layout -------------------------------------------

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check(table)?;
        let (vocab, d) = self.dims2(table, "embedding")?;
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::index("embedding", format!("id {id} outside table of {vocab} rows")));
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(Cow::Owned(out), vec![ids.len(), d], Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        for &p in parts {
            self.check(p)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut extents = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {base:?} along axis {axis}")));
            }
            extents.push(s[axis]);
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &e) in parts.iter().zip(&extents) {
                let block = e * inner;
                out.extend_from_slice(&self.value(p)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Cow::Owned(out), shape, Op::Concat { parts: parts.to_vec(), outer, inner, extents }, rg))
    }

    /// Contiguous range `start..start+len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let mut shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("slice", format!("range {start}..{} on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, extent, inner) = axis_split(&shape, axis);
        let xs = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * extent + start) * inner;
            out.extend_from_slice(&xs[from..from + len * inner]);
        }
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), shape, Op::Slice { x, outer, inner, extent, start, len }, rg))
    }

    /// Splits `x` along `axis` into pieces of the given extents.
    pub fn split(&mut self, x: Var, axis: usize, extents: &[usize]) -> Result<Vec<Var>> {
        let total: usize = extents.iter().sum();
        if self.shape(x).get(axis) != Some(&total) {
            return Err(Error::shape("split", format!("extents {extents:?} do not cover axis {axis} of {:?}", self.shape(x))));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(extents.len());
        for &e in extents {
            out.push(self.slice(x, axis, start, e)?);
            start += e;
        }
        Ok(out)
    }

    /// Sum over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let xs = self.value(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for t in 0..n {
                let src = &xs[(o * n + t) * inner..(o * n + t + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), new_shape, Op::SumAxis { x, outer, n, inner }, rg))
    }

    /// Arithmetic mean over `axis`, removing it from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self.shape(x).get(axis).ok_or_else(|| Error::shape("mean", format!("axis {axis} out of range")))?;
        if n == 0 {
            return Err(Error::shape("mean", "cannot average an empty axis"));
        }
        let s = self.sum_axis(x, axis)?;
        self.scale(s, T::of(n as f64).recip())
    }

    /// Sum of all elements as a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let total = self.value(x).iter().copied().sum::<T>();
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(vec![total]), Vec::new(), Op::Sum(x), rg))
    }

    /// Rows `idx` of matrix `x`, in order (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        self.check(x)?;
        let (rows, d) = self.dims2(x, "gather_rows")?;
        let xs = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= rows {
                return Err(Error::index("gather_rows", format!("row {i} of {rows}")));
            }
            out.extend_from_slice(&xs[i * d..(i + 1) * d]);
        }
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), vec![idx.len(), d], Op::GatherRows { x, idx: idx.to_vec() }, rg))
    }

    /// `out[idx[r]] += x[r]` into an `n_out x d` zero matrix.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], n_out: usize) -> Result<Var> {
        self.check(x)?;
        let (rows, d) = self.dims2(x, "scatter_add_rows")?;
        if idx.len() != rows {
            return Err(Error::shape("scatter_add_rows", format!("{} indices for {rows} rows", idx.len())));
        }
        let xs = self.value(x);
        let mut out = vec![T::zero(); n_out * d];
        for (r, &i) in idx.iter().enumerate() {
            if i >= n_out {
                return Err(Error::index("scatter_add_rows", format!("row {i} of {n_out}")));
            }
            for (o, &v) in out[i * d..(i + 1) * d].iter_mut().zip(&xs[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), vec![n_out, d], Op::ScatterAddRows { x, idx: idx.to_vec() }, rg))
    }

    /// Tiles a `d`-vector (or `1 x d` matrix) into `n x d`.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        self.check(x)?;
        let d = match self.shape(x) {
            [d] | [1, d] => *d,
            s => return Err(Error::shape("repeat_rows", format!("expected a vector, got {s:?}"))),
        };
        let row = self.value(x).to_vec();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(&row);
        }
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), vec![n, d], Op::RepeatRows(x), rg))
    }

    /// Inverted dropout. Identity when `!train` or `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        self.check(x)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Tape(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
        let out: Vec<T> = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(Cow::Owned(out), shape, Op::Dropout { x, mask }, rg))
    }

    // ---- backward -------------------------------------------------------

    /// Propagates d(loss)/d(node) back to every leaf with `requires_grad`.
    ///
    /// The tape may be differentiated once; call [`Tape::reset`] before
    /// recording a new graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        if self.backpropagated {
            return Err(Error::Tape("backward already ran on this tape; reset it first".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Tape(format!("backward root must be a scalar, got shape {:?}", self.shape(loss))));
        }
        self.backpropagated = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        macro_rules! acc {
            ($v:expr) => {
                slot(nodes, grads, $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if let Some(ga) = acc!(*a) {
                    matmul_nt_acc(g, &nodes[b.0].value, ga, m, n, k);
                }
                if let Some(gb) = acc!(*b) {
                    matmul_tn_acc(&nodes[a.0].value, g, gb, m, k, n);
                }
            }
            Op::MatmulNt(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[0];
                if let Some(ga) = acc!(*a) {
                    matmul_acc(g, &nodes[b.0].value, ga, m, n, k);
                }
                if let Some(gb) = acc!(*b) {
                    matmul_tn_acc(g, &nodes[a.0].value, gb, m, n, k);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                if let Some(ga) = acc!(*a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc!(*b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc!(*b) {
                    gb.iter_mut().zip(g).for_each(|(d, &s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = acc!(*a) {
                    let bv = &nodes[b.0].value;
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(bv.iter()) {
                        *d += s * y;
                    }
                }
                if let Some(gb) = acc!(*b) {
                    let av = &nodes[a.0].value;
                    for ((d, &s), &x) in gb.iter_mut().zip(g).zip(av.iter()) {
                        *d += s * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v * *s);
                }
            }
            Op::AddBias(x, b) => {
                if let Some(gx) = acc!(*x) {
                    add_into(gx, g);
                }
                if let Some(gb) = acc!(*b) {
                    let d = gb.len();
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = acc!(*a) {
                    let out = &node.value;
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                        if y > T::zero() {
                            *d += s;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = acc!(*a) {
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(node.value.iter()) {
                        *d += s * y * (T::one() - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = acc!(*a) {
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(node.value.iter()) {
                        *d += s * (T::one() - y * y);
                    }
                }
            }
            Op::Map(a, df) => {
                if let Some(ga) = acc!(*a) {
                    for ((d, &s), &x) in ga.iter_mut().zip(g).zip(nodes[a.0].value.iter()) {
                        *d += s * df(x);
                    }
                }
            }
            Op::Softmax { x, outer, n, inner } => {
                if let Some(gx) = acc!(*x) {
                    let y = &node.value;
                    for o in 0..*outer {
                        for c in 0..*inner {
                            let base = o * n * inner + c;
                            let mut s = T::zero();
                            for t in 0..*n {
                                let idx = base + t * inner;
                                s += g[idx] * y[idx];
                            }
                            for t in 0..*n {
                                let idx = base + t * inner;
                                gx[idx] += y[idx] * (g[idx] - s);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let d = nodes[gain.0].value.len();
                let gv = &nodes[gain.0].value;
                if let Some(gg) = acc!(*gain) {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(gb) = acc!(*bias) {
                    for grow in g.chunks(d) {
                        add_into(gb, grow);
                    }
                }
                if let Some(gx) = acc!(*x) {
                    let nd = T::of(d as f64);
                    for (r, (grow, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            let dh = grow[j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hrow[j];
                        }
                        let scale = inv_std[r] / nd;
                        for j in 0..d {
                            let dh = grow[j] * gv[j];
                            gx[r * d + j] += scale * (nd * dh - sum_dh - hrow[j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs, supervised, count } => {
                if let Some(gl) = acc!(*logits) {
                    let v = nodes[logits.0].shape[1];
                    let w = g[0] / T::of(*count as f64);
                    for (r, &tgt) in targets.iter().enumerate() {
                        if !supervised[r] {
                            continue;
                        }
                        for c in 0..v {
                            let onehot = if c == tgt { T::one() } else { T::zero() };
                            gl[r * v + c] += w * (probs[r * v + c] - onehot);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(gt) = acc!(*table) {
                    let d = nodes[table.0].shape[1];
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Concat { parts, outer, inner, extents } => {
                let total: usize = extents.iter().sum();
                let mut offset = 0;
                for (&p, &e) in parts.iter().zip(extents) {
                    if let Some(gp) = acc!(p) {
                        let block = e * inner;
                        for o in 0..*outer {
                            let from = (o * total + offset) * inner;
                            add_into(&mut gp[o * block..(o + 1) * block], &g[from..from + block]);
                        }
                    }
                    offset += e;
                }
            }
            Op::Slice { x, outer, inner, extent, start, len } => {
                if let Some(gx) = acc!(*x) {
                    let block = len * inner;
                    for o in 0..*outer {
                        let to = (o * extent + start) * inner;
                        add_into(&mut gx[to..to + block], &g[o * block..(o + 1) * block]);
                    }
                }
            }
            Op::SumAxis { x, outer, n, inner } => {
                if let Some(gx) = acc!(*x) {
                    for o in 0..*outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for t in 0..*n {
                            let to = (o * n + t) * inner;
                            add_into(&mut gx[to..to + inner], src);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::GatherRows { x, idx } => {
                if let Some(gx) = acc!(*x) {
                    let d = nodes[x.0].shape[1];
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut gx[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::ScatterAddRows { x, idx } => {
                if let Some(gx) = acc!(*x) {
                    let d = nodes[x.0].shape[1];
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut gx[r * d..(r + 1) * d], &g[i * d..(i + 1) * d]);
                    }
                }
            }
            Op::RepeatRows(x) => {
                if let Some(gx) = acc!(*x) {
                    let d = gx.len();
                    for row in g.chunks(d) {
                        add_into(gx, row);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = acc!(*x) {
                    for ((d, &s), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *d += s * m;
                    }
                }
            }
        }
    }
}

/// Lazily allocated gradient accumulator for a parent that needs one.
fn slot<'g, T: Scalar>(nodes: &[Node<'_, T>], grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
}

#[inline]
fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
