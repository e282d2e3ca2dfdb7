//! Multi-head scaled dot-product attention.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Linear, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Var;

/// Query, key and value projections are `d_model x d_model` matrices whose
/// column blocks of width `d_head` are the per-head projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub out: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d_model: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::config("heads", format!("{heads} heads do not divide d_model {d_model}")));
        }
        Ok(MultiHeadAttention {
            wq: store.add_uniform(format!("{name}.query"), &[d_model, d_model], d_model, rng),
            wk: store.add_uniform(format!("{name}.key"), &[d_model, d_model], d_model, rng),
            wv: store.add_uniform(format!("{name}.value"), &[d_model, d_model], d_model, rng),
            out: Linear::new(store, &format!("{name}.out"), d_model, d_model, rng),
            heads,
            d_model,
        })
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    /// `queries: Tq x d`, `keys`/`values: Tk x d`. `mask`, when given, is a
    /// row-major `Tq x Tk` table of allowed positions.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, queries: Var, keys: Var, values: Var, mask: Option<&[bool]>) -> Result<Var> {
        let d = self.d_model;
        let tq = rows_of(s, queries, d, "queries")?;
        let tk = rows_of(s, keys, d, "keys")?;
        let tv = rows_of(s, values, d, "values")?;
        if tk != tv {
            return Err(Error::shape("attention", format!("{tk} keys but {tv} values")));
        }
        if let Some(m) = mask {
            if m.len() != tq * tk {
                return Err(Error::shape("attention", format!("mask of {} entries for {tq}x{tk} scores", m.len())));
            }
        }
        let (wq, wk, wv) = (s.param(self.wq), s.param(self.wk), s.param(self.wv));
        let q = s.tape.matmul(queries, wq)?;
        let k = s.tape.matmul(keys, wk)?;
        let v = s.tape.matmul(values, wv)?;
        let dh = self.d_head();
        let inv_sqrt = T::of(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) =
                if self.heads == 1 { (q, k, v) } else { (s.tape.slice(q, 1, h * dh, dh)?, s.tape.slice(k, 1, h * dh, dh)?, s.tape.slice(v, 1, h * dh, dh)?) };
            let scores = s.tape.matmul_nt(qh, kh)?;
            let scores = s.tape.scale(scores, inv_sqrt)?;
            let weights = match mask {
                Some(m) => s.tape.softmax_masked(scores, m)?,
                None => s.tape.softmax(scores, 1)?,
            };
            heads.push(s.tape.matmul(weights, vh)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { s.tape.concat(&heads, 1)? };
        self.out.forward(s, joined)
    }
}

fn rows_of<T: Scalar>(s: &Session<'_, T>, x: Var, d: usize, what: &str) -> Result<usize> {
    match s.tape.shape(x) {
        [n, w] if *w == d => Ok(*n),
        sh => Err(Error::shape("attention", format!("{what} {sh:?}, expected [_, {d}]"))),
    }
}

/// Lower-triangular `t x t` mask: position `i` may attend to `j <= i`.
pub fn causal_mask(t: usize) -> Vec<bool> {
    (0..t * t).map(|k| k % t <= k / t).collect()
}
