//! Single-layer gated recurrent decoder with dot-product attention over
//! the encoder memory. Serves as the recurrent baseline.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Linear, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Var;

#[derive(Clone, Debug)]
pub struct GruDecoder {
    pub embedding: ParamId,
    pub init: Linear,
    pub query: ParamId,
    pub input_gates: Linear,
    pub hidden_gates: Linear,
    pub head: Linear,
    pub d_model: usize,
    pub vocab: usize,
}

impl GruDecoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, vocab: usize, d_embed: usize, d: usize, rng: &mut R) -> Self {
        GruDecoder {
            embedding: store.add_uniform(format!("{name}.embedding"), &[vocab, d_embed], d_embed, rng),
            init: Linear::new(store, &format!("{name}.init"), d, d, rng),
            query: store.add_uniform(format!("{name}.query"), &[d, d], d, rng),
            input_gates: Linear::new(store, &format!("{name}.input_gates"), d_embed + d, 3 * d, rng),
            hidden_gates: Linear::new(store, &format!("{name}.hidden_gates"), d, 3 * d, rng),
            head: Linear::new(store, &format!("{name}.head"), 2 * d, vocab, rng),
            d_model: d,
            vocab,
        }
    }

    /// Logits `T x V`, one row per input token.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, memory: Var, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::shape("gru decoder", "empty token sequence"));
        }
        let d = self.d_model;
        let pooled = s.tape.mean(memory, 0)?;
        let pooled = s.tape.reshape(pooled, &[1, d])?;
        let h0 = self.init.forward(s, pooled)?;
        let mut h = s.tape.tanh(h0)?;
        let table = s.param(self.embedding);
        let wq = s.param(self.query);
        let inv_sqrt = T::of(1.0 / (d as f64).sqrt());
        let mut outputs = Vec::with_capacity(ids.len());
        for &id in ids {
            let e = s.tape.embedding(table, &[id])?;
            let q = s.tape.matmul(h, wq)?;
            let scores = s.tape.matmul_nt(q, memory)?;
            let scores = s.tape.scale(scores, inv_sqrt)?;
            let weights = s.tape.softmax(scores, 1)?;
            let context = s.tape.matmul(weights, memory)?;
            let x = s.tape.concat(&[e, context], 1)?;
            let gx = self.input_gates.forward(s, x)?;
            let gh = self.hidden_gates.forward(s, h)?;
            let gx = s.tape.split(gx, 1, &[d, d, d])?;
            let gh = s.tape.split(gh, 1, &[d, d, d])?;
            let z = s.tape.add(gx[0], gh[0])?;
            let z = s.tape.sigmoid(z)?;
            let r = s.tape.add(gx[1], gh[1])?;
            let r = s.tape.sigmoid(r)?;
            let rh = s.tape.mul(r, gh[2])?;
            let n = s.tape.add(gx[2], rh)?;
            let n = s.tape.tanh(n)?;
            // h' = n + z (h - n)
            let diff = s.tape.sub(h, n)?;
            let keep = s.tape.mul(z, diff)?;
            h = s.tape.add(n, keep)?;
            outputs.push(s.tape.concat(&[h, context], 1)?);
        }
        let stacked = if outputs.len() == 1 { outputs[0] } else { s.tape.concat(&outputs, 0)? };
        self.head.forward(s, stacked)
    }
}
