//! Parameter storage and the small layer vocabulary shared by the
//! encoder and decoders.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{GradCheckReport, Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered set of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(id)
    }

    /// Adds a tensor drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches data"))
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape.to_vec(), T::of(value)))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds per-parameter gradients from one backward pass.
    pub fn accumulate(&mut self, grads: &ParamGrads<T>) -> Result<()> {
        for (t, g) in self.tensors.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Replaces the value of a named parameter, keeping its shape.
    pub fn assign(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        let slot = &mut self.tensors[id.0];
        if slot.shape() != tensor.shape() {
            return Err(Error::Checkpoint(format!("parameter {name}: shape {:?} vs stored {:?}", tensor.shape(), slot.shape())));
        }
        *slot = tensor.with_requires_grad(true);
        Ok(())
    }
}

/// Gradients for every parameter touched by one graph.
#[derive(Clone, Debug)]
pub struct ParamGrads<T>(Vec<Option<Vec<T>>>);

impl<T: Scalar> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.0.get(id.0).and_then(|g| g.as_deref())
    }
}

/// A tape bound to a parameter store. Parameters are recorded lazily
/// (borrowed, not copied) the first time a layer asks for them.
pub struct Session<'a, T: Scalar> {
    pub tape: Tape<'a, T>,
    params: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    train: bool,
    dropout: f64,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(params: &'a ParamStore<T>, train: bool) -> Self {
        Session { tape: Tape::new(), params, bound: vec![None; params.len()], train, dropout: 0.0, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    /// Enables dropout at `rate` on training passes, drawing masks from a
    /// stream seeded with `seed`.
    pub fn with_dropout(mut self, rate: f64, seed: u64) -> Self {
        self.dropout = rate;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> &'a ParamStore<T> {
        self.params
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        self.tape.dropout(x, self.dropout, self.train, &mut self.rng)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.params.get(id);
        let v = if self.train { self.tape.leaf(t) } else { self.tape.leaf_frozen(t) };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn backward(mut self, loss: Var) -> Result<ParamGrads<T>> {
        let mut grads: Gradients<T> = self.tape.backward(loss)?;
        let per_param = self.bound.iter().map(|b| b.and_then(|v| grads.take(v))).collect();
        Ok(ParamGrads(per_param))
    }
}

/// Affine map `x W + b` with `W: in x out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = store.add_uniform(format!("{name}.weight"), &[fan_in, fan_out], fan_in, rng);
        let b = store.add_uniform(format!("{name}.bias"), &[fan_out], fan_in, rng);
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.w);
        let b = s.param(self.b);
        let h = s.tape.matmul(x, w)?;
        s.tape.add_bias(h, b)
    }
}

/// Gain and bias of a layer normalisation.
#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNormParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        LayerNormParams { gain: store.add_const(format!("{name}.gain"), &[d], 1.0), bias: store.add_const(format!("{name}.bias"), &[d], 0.0) }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let g = s.param(self.gain);
        let b = s.param(self.bias);
        s.tape.layer_norm(x, g, b, T::of(LAYER_NORM_EPS))
    }
}

/// Central-difference check of the gradient of `f` with respect to one
/// parameter tensor. Same error measure as [`crate::tensor::grad_check`].
pub fn grad_check_param<T, F>(store: &mut ParamStore<T>, id: ParamId, h: T, f: F) -> Result<GradCheckReport<T>>
where
    T: Scalar,
    F: for<'s> Fn(&mut Session<'s, T>) -> Result<Var>,
{
    let analytic = {
        let mut s = Session::new(store, true);
        let out = f(&mut s)?;
        let grads = s.backward(out)?;
        grads.get(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); store.get(id).numel()])
    };
    let eval = |store: &ParamStore<T>| -> Result<T> {
        let mut s = Session::new(store, false);
        let out = f(&mut s)?;
        if s.tape.value(out).len() != 1 {
            return Err(Error::Tape("grad_check_param function must return a scalar".into()));
        }
        Ok(s.tape.item(out))
    };
    let two = T::of(2.0);
    let floor = T::of(1e-8);
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut max_rel_error = T::zero();
    let mut worst_index = 0;
    for (i, &ana) in analytic.iter().enumerate() {
        let orig = store.get(id).data()[i];
        store.get_mut(id).data_mut()[i] = orig + h;
        let plus = eval(store)?;
        store.get_mut(id).data_mut()[i] = orig - h;
        let minus = eval(store)?;
        store.get_mut(id).data_mut()[i] = orig;
        let num = (plus - minus) / (two * h);
        let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(floor);
        if rel > max_rel_error || rel.is_nan() {
            max_rel_error = rel;
            worst_index = i;
        }
        numeric.push(num);
    }
    Ok(GradCheckReport { max_rel_error, worst_index, analytic, numeric })
}
