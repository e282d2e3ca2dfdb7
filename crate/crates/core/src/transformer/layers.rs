//! Post-norm transformer encoder and decoder stacks.

use rand::Rng;

use super::attention::{causal_mask, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::nn::{LayerNormParams, Linear, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Position-wise `relu(x W1 + b1) W2 + b2` with inner width `4 d`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d: usize, rng: &mut R) -> Self {
        FeedForward { inner: Linear::new(store, &format!("{name}.inner"), d, 4 * d, rng), outer: Linear::new(store, &format!("{name}.outer"), 4 * d, d, rng) }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = self.inner.forward(s, x)?;
        let h = s.tape.relu(h)?;
        self.outer.forward(s, h)
    }
}

/// `norm(x + dropout(sub))`.
fn add_norm<T: Scalar>(s: &mut Session<'_, T>, norm: &LayerNormParams, x: Var, sub: Var) -> Result<Var> {
    let sub = s.dropout(sub)?;
    let sum = s.tape.add(x, sub)?;
    norm.forward(s, sum)
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub attn_norm: LayerNormParams,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNormParams,
}

impl EncoderLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(EncoderLayer {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            attn_norm: LayerNormParams::new(store, &format!("{name}.attn_norm"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, rng),
            ffn_norm: LayerNormParams::new(store, &format!("{name}.ffn_norm"), d),
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let a = self.attn.forward(s, x, x, x, None)?;
        let x = add_norm(s, &self.attn_norm, x, a)?;
        let f = self.ffn.forward(s, x)?;
        add_norm(s, &self.ffn_norm, x, f)
    }
}

/// Stack of self-attention layers over region tokens. Carries no
/// positional information, so it is equivariant to row order.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub d_model: usize,
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, depth: usize, rng: &mut R) -> Result<Self> {
        let layers = (0..depth).map(|l| EncoderLayer::new(store, &format!("{name}.{l}"), d, heads, rng)).collect::<Result<_>>()?;
        Ok(Encoder { layers, d_model: d })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        self.layers.iter().try_fold(x, |h, layer| layer.forward(s, h))
    }
}

/// `pe[p, 2i] = sin(p / 10000^(2i/d))`, `pe[p, 2i+1] = cos(same)`.
pub fn sinusoidal_encoding<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for p in 0..len {
        for c in 0..d {
            let pair = (c / 2 * 2) as f64;
            let angle = p as f64 / 10000f64.powf(pair / d as f64);
            data.push(T::of(if c % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new([len, d], data).expect("len x d")
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub self_norm: LayerNormParams,
    pub cross_attn: MultiHeadAttention,
    pub cross_norm: LayerNormParams,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNormParams,
}

impl DecoderLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(DecoderLayer {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, heads, rng)?,
            self_norm: LayerNormParams::new(store, &format!("{name}.self_norm"), d),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, heads, rng)?,
            cross_norm: LayerNormParams::new(store, &format!("{name}.cross_norm"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, rng),
            ffn_norm: LayerNormParams::new(store, &format!("{name}.ffn_norm"), d),
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, y: Var, memory: Var, mask: &[bool]) -> Result<Var> {
        let a = self.self_attn.forward(s, y, y, y, Some(mask))?;
        let y = add_norm(s, &self.self_norm, y, a)?;
        let c = self.cross_attn.forward(s, y, memory, memory, None)?;
        let y = add_norm(s, &self.cross_norm, y, c)?;
        let f = self.ffn.forward(s, y)?;
        add_norm(s, &self.ffn_norm, y, f)
    }
}

/// Token embedding (optionally projected to `d_model`), sinusoidal
/// positions, causal decoder layers and a vocabulary head.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub embedding: ParamId,
    pub embed_proj: Option<Linear>,
    pub layers: Vec<DecoderLayer>,
    pub head: Linear,
    pub d_model: usize,
    pub vocab: usize,
}

impl Decoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        d_embed: usize,
        d: usize,
        heads: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let embedding = store.add_uniform(format!("{name}.embedding"), &[vocab, d_embed], d_embed, rng);
        let embed_proj = (d_embed != d).then(|| Linear::new(store, &format!("{name}.embed_proj"), d_embed, d, rng));
        let layers = (0..depth).map(|l| DecoderLayer::new(store, &format!("{name}.{l}"), d, heads, rng)).collect::<Result<_>>()?;
        let head = Linear::new(store, &format!("{name}.head"), d, vocab, rng);
        Ok(Decoder { embedding, embed_proj, layers, head, d_model: d, vocab })
    }

    /// Embedded and position-encoded input tokens, `T x d_model`.
    pub fn embed<T: Scalar>(&self, s: &mut Session<'_, T>, ids: &[usize]) -> Result<Var> {
        let table = s.param(self.embedding);
        let mut x = s.tape.embedding(table, ids)?;
        if let Some(p) = &self.embed_proj {
            x = p.forward(s, x)?;
        }
        let pe = s.tape.constant(sinusoidal_encoding(ids.len(), self.d_model));
        s.tape.add(x, pe)
    }

    /// Logits `T x V` for next-token prediction at every input position.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, memory: Var, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::shape("decoder", "empty token sequence"));
        }
        let mut y = self.embed(s, ids)?;
        let mask = causal_mask(ids.len());
        for layer in &self.layers {
            y = layer.forward(s, y, memory, &mask)?;
        }
        self.head.forward(s, y)
    }
}
