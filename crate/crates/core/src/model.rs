//! The full captioner: visual graph encoder, region transformer and a
//! transformer or recurrent decoder.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::vocab::{Vocabulary, PAD};
use crate::data::SceneSample;
use crate::error::{Error, Result};
use crate::graph::{
    build_spatial_graph, fuse, image_gcn_forward, knn_query, object_gcn_forward, pool_image, ImageBank, ImageGcnParams, ImageGraph, ObjectGcnParams,
    RelationPolicy, SpatialGraph,
};
use crate::nn::{Linear, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};
use crate::transformer::{generate, log_softmax, CaptionState, DecodeOptions, Decoder, Encoder, GruDecoder, StepScorer};

/// How one branch of the visual encoder is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    None,
    /// Per-region (or pooled) projected features, no message passing.
    Feature,
    Gcn,
}

/// Object-level and image-level branch choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EncoderMode {
    pub object: Branch,
    pub image: Branch,
}

impl EncoderMode {
    pub const DUAL_GCN: EncoderMode = EncoderMode { object: Branch::Gcn, image: Branch::Gcn };
    pub const GCN_OBJ: EncoderMode = EncoderMode { object: Branch::Gcn, image: Branch::None };
    pub const F_OBJ: EncoderMode = EncoderMode { object: Branch::Feature, image: Branch::None };
    pub const GCN_IMG: EncoderMode = EncoderMode { object: Branch::None, image: Branch::Gcn };
    pub const F_IMG: EncoderMode = EncoderMode { object: Branch::None, image: Branch::Feature };
    pub const GCN_OBJ_F_IMG: EncoderMode = EncoderMode { object: Branch::Gcn, image: Branch::Feature };
    pub const GCN_IMG_F_OBJ: EncoderMode = EncoderMode { object: Branch::Feature, image: Branch::Gcn };

    pub const ALL: [EncoderMode; 7] = [Self::F_OBJ, Self::GCN_OBJ, Self::F_IMG, Self::GCN_IMG, Self::GCN_OBJ_F_IMG, Self::GCN_IMG_F_OBJ, Self::DUAL_GCN];

    pub fn label(&self) -> &'static str {
        use Branch::*;
        match (self.object, self.image) {
            (Feature, None) => "F_obj",
            (Gcn, None) => "GCN_obj",
            (None, Feature) => "F_img",
            (None, Gcn) => "GCN_img",
            (Gcn, Feature) => "GCN_obj&F_img",
            (Feature, Gcn) => "GCN_img&F_obj",
            (Gcn, Gcn) => "Dual-GCN",
            (Feature, Feature) => "F_obj&F_img",
            (None, None) => "none",
        }
    }

    pub fn uses_bank(&self) -> bool {
        self.image == Branch::Gcn
    }

    fn validate(&self) -> Result<()> {
        if self.object == Branch::None && self.image == Branch::None {
            return Err(Error::config("encoder", "at least one branch must be enabled"));
        }
        Ok(())
    }
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EncoderMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let all = Self::ALL.iter().chain(&[EncoderMode { object: Branch::Feature, image: Branch::Feature }]);
        all.copied().find(|m| m.label().eq_ignore_ascii_case(s.trim())).ok_or_else(|| Error::config("encoder", format!("unknown encoder mode {s:?}")))
    }
}

impl TryFrom<String> for EncoderMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EncoderMode> for String {
    fn from(m: EncoderMode) -> String {
        m.label().to_string()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    #[default]
    Transformer,
    Recurrent,
}

impl DecoderKind {
    pub fn label(&self) -> &'static str {
        match self {
            DecoderKind::Transformer => "Trans",
            DecoderKind::Recurrent => "GRU",
        }
    }
}

impl FromStr for DecoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "transformer" | "trans" => Ok(DecoderKind::Transformer),
            "recurrent" | "gru" | "lstm" => Ok(DecoderKind::Recurrent),
            _ => Err(Error::config("decoder", format!("unknown decoder {s:?}"))),
        }
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub graph_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_embed: usize,
    pub vocab_size: usize,
    pub neighbors: usize,
    pub max_regions: usize,
    pub dropout: f64,
    pub encoder: EncoderMode,
    pub decoder: DecoderKind,
    pub relations: RelationPolicy,
}

impl Default for ModelConfig {
    /// Full-size dimensions.
    fn default() -> Self {
        ModelConfig {
            feature_dim: 2048,
            graph_dim: 1024,
            d_model: 512,
            heads: 8,
            layers: 6,
            d_embed: 1000,
            vocab_size: 0,
            neighbors: 6,
            max_regions: 36,
            dropout: 0.0,
            encoder: EncoderMode::DUAL_GCN,
            decoder: DecoderKind::Transformer,
            relations: RelationPolicy::default(),
        }
    }
}

impl ModelConfig {
    /// Small dimensions for CPU experiments.
    pub fn toy() -> Self {
        ModelConfig { feature_dim: 64, graph_dim: 32, d_model: 64, heads: 2, layers: 2, d_embed: 64, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let positive = [
            ("feature_dim", self.feature_dim),
            ("graph_dim", self.graph_dim),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
            ("d_embed", self.d_embed),
            ("neighbors", self.neighbors),
            ("max_regions", self.max_regions),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::config("heads", format!("{} heads do not divide d_model {}", self.heads, self.d_model)));
        }
        if self.vocab_size <= crate::data::vocab::RESERVED.len() {
            return Err(Error::config("vocab_size", format!("{} leaves no ordinary tokens", self.vocab_size)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of the fused visual matrix fed to the input projection.
    pub fn fused_dim(&self) -> usize {
        let branches = [self.encoder.object, self.encoder.image].iter().filter(|b| **b != Branch::None).count();
        branches * self.graph_dim
    }
}

/// A sample converted to model inputs.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub id: u64,
    /// `O x C` region features.
    pub features: Tensor<T>,
    pub graph: SpatialGraph,
    pub references: Vec<Vec<String>>,
    /// `<bos> ... <eos>` id sequences, one per reference.
    pub targets: Vec<Vec<usize>>,
}

pub fn prepare<T: Scalar>(samples: &[SceneSample], vocab: &Vocabulary, config: &ModelConfig) -> Result<Vec<Prepared<T>>> {
    samples
        .iter()
        .map(|s| {
            s.validate(config.feature_dim)?;
            let graph = build_spatial_graph(&s.regions, &config.relations, config.max_regions)?;
            let data = s.regions.iter().flat_map(|r| r.feature.iter().map(|&v| T::of(v as f64))).collect();
            Ok(Prepared {
                id: s.id,
                features: Tensor::new([s.regions.len(), config.feature_dim], data)?,
                graph,
                references: s.references.clone(),
                targets: s.references.iter().map(|r| vocab.encode_caption(r)).collect(),
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum DecoderNet {
    Transformer(Decoder),
    Recurrent(GruDecoder),
}

impl DecoderNet {
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, memory: Var, ids: &[usize]) -> Result<Var> {
        match self {
            DecoderNet::Transformer(d) => d.forward(s, memory, ids),
            DecoderNet::Recurrent(d) => d.forward(s, memory, ids),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub object_feature: Option<Linear>,
    pub object_gcn: Option<ObjectGcnParams>,
    pub image_gcn: Option<ImageGcnParams>,
    pub project: Linear,
    pub encoder: Encoder,
    pub decoder: DecoderNet,
}

#[derive(Clone, Debug)]
pub struct CaptionModel<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub layout: Layout,
    /// Pooled embeddings of the images searched for neighbours.
    pub bank: ImageBank<T>,
}

impl<T: Scalar> CaptionModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let needs_feature = c.encoder.object != Branch::Gcn;
        let object_feature = needs_feature.then(|| Linear::new(&mut store, "object.feature", c.feature_dim, c.graph_dim, &mut rng));
        let object_gcn = (c.encoder.object == Branch::Gcn).then(|| ObjectGcnParams::new(&mut store, "object.gcn", c.feature_dim, c.graph_dim, &mut rng));
        let image_gcn = (c.encoder.image == Branch::Gcn).then(|| {
            let mut p = ImageGcnParams::new(&mut store, "image.gcn", c.graph_dim, &mut rng);
            p.include_center = c.relations.self_loops;
            p
        });
        let project = Linear::new(&mut store, "project", c.fused_dim(), c.d_model, &mut rng);
        let encoder = Encoder::new(&mut store, "encoder", c.d_model, c.heads, c.layers, &mut rng)?;
        let decoder = match c.decoder {
            DecoderKind::Transformer => {
                DecoderNet::Transformer(Decoder::new(&mut store, "decoder", c.vocab_size, c.d_embed, c.d_model, c.heads, c.layers, &mut rng)?)
            }
            DecoderKind::Recurrent => DecoderNet::Recurrent(GruDecoder::new(&mut store, "decoder", c.vocab_size, c.d_embed, c.d_model, &mut rng)),
        };
        let layout = Layout { object_feature, object_gcn, image_gcn, project, encoder, decoder };
        Ok(CaptionModel { bank: ImageBank::new(config.graph_dim), config, params: store, layout })
    }

    /// Per-region embeddings `O x d_g` that are pooled for the image branch.
    pub fn region_embedding<'a>(&self, s: &mut Session<'a, T>, input: &'a Prepared<T>) -> Result<Var> {
        let x = s.tape.leaf_frozen(&input.features);
        match (&self.layout.object_gcn, &self.layout.object_feature) {
            (Some(gcn), _) => object_gcn_forward(s, &input.graph, x, gcn),
            (None, Some(lin)) => {
                let h = lin.forward(s, x)?;
                s.tape.relu(h)
            }
            (None, None) => Err(Error::config("encoder", "no object embedding configured")),
        }
    }

    /// Neighbourhood of an image in the bank, by pooled embedding.
    pub fn image_graph(&self, id: u64, pooled: &[T]) -> Result<ImageGraph<T>> {
        let neighbors = if self.bank.is_empty() { Vec::new() } else { knn_query(pooled, Some(id), &self.bank, self.config.neighbors)? };
        Ok(ImageGraph { center_id: id, center: pooled.to_vec(), neighbors })
    }

    /// Fused visual matrix before the input projection.
    pub fn visual<'a>(&self, s: &mut Session<'a, T>, input: &'a Prepared<T>) -> Result<Var> {
        let base = self.region_embedding(s, input)?;
        let object = (self.config.encoder.object != Branch::None).then_some(base);
        let image = match self.config.encoder.image {
            Branch::None => None,
            Branch::Feature => Some(pool_image(s, base)?),
            Branch::Gcn => {
                let pooled = pool_image(s, base)?;
                let graph = self.image_graph(input.id, s.tape.value(pooled))?;
                let gcn = self.layout.image_gcn.as_ref().expect("image gcn present");
                Some(image_gcn_forward(s, pooled, &graph, gcn)?)
            }
        };
        match (object, image) {
            (Some(o), Some(u)) => fuse(s, o, u),
            (Some(o), None) => Ok(o),
            (None, Some(u)) => s.tape.reshape(u, &[1, self.config.graph_dim]),
            (None, None) => Err(Error::config("encoder", "at least one branch must be enabled")),
        }
    }

    /// Encoder output (the decoder memory), `rows x d_model`.
    pub fn encode<'a>(&self, s: &mut Session<'a, T>, input: &'a Prepared<T>) -> Result<Var> {
        let u = self.visual(s, input)?;
        let projected = self.layout.project.forward(s, u)?;
        self.layout.encoder.forward(s, projected)
    }

    pub fn logits(&self, s: &mut Session<'_, T>, memory: Var, ids: &[usize]) -> Result<Var> {
        self.layout.decoder.forward(s, memory, ids)
    }

    /// Teacher-forced cross-entropy of one `<bos> ... <eos>` target.
    pub fn loss<'a>(&self, s: &mut Session<'a, T>, input: &'a Prepared<T>, target: &[usize]) -> Result<Var> {
        if target.len() < 2 {
            return Err(Error::shape("loss", "target needs <bos> and at least one more token"));
        }
        let memory = self.encode(s, input)?;
        let logits = self.logits(s, memory, &target[..target.len() - 1])?;
        s.tape.cross_entropy(logits, &target[1..], Some(PAD))
    }

    /// Pooled region embedding with frozen parameters.
    pub fn pooled_embedding(&self, input: &Prepared<T>) -> Result<Vec<T>> {
        let mut s = Session::new(&self.params, false);
        let base = self.region_embedding(&mut s, input)?;
        let pooled = pool_image(&mut s, base)?;
        Ok(s.tape.value(pooled).to_vec())
    }

    /// Rebuilds the neighbour bank from `inputs`. A no-op for modes
    /// without an image-level graph.
    pub fn refresh_bank(&mut self, inputs: &[Prepared<T>]) -> Result<()> {
        let mut bank = ImageBank::new(self.config.graph_dim);
        if self.config.encoder.uses_bank() {
            for p in inputs {
                bank.push(p.id, &self.pooled_embedding(p)?)?;
            }
        }
        self.bank = bank;
        Ok(())
    }

    pub fn memory(&self, input: &Prepared<T>) -> Result<Tensor<T>> {
        let mut s = Session::new(&self.params, false);
        let m = self.encode(&mut s, input)?;
        Ok(s.tape.tensor(m))
    }

    pub fn scorer<'m>(&'m self, memory: &'m Tensor<T>) -> ModelScorer<'m, T> {
        ModelScorer { model: self, memory }
    }

    pub fn caption(&self, input: &Prepared<T>, opts: &DecodeOptions) -> Result<CaptionState> {
        let memory = self.memory(input)?;
        generate(&mut self.scorer(&memory), opts)
    }
}

/// Next-token log-probabilities from a fixed encoder memory.
pub struct ModelScorer<'m, T: Scalar> {
    model: &'m CaptionModel<T>,
    memory: &'m Tensor<T>,
}

impl<T: Scalar> StepScorer for ModelScorer<'_, T> {
    fn next_log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut s = Session::new(&self.model.params, false);
        let mem = s.tape.leaf_frozen(self.memory);
        let logits = self.model.logits(&mut s, mem, prefix)?;
        let v = self.model.config.vocab_size;
        let all = s.tape.value(logits);
        let last: Vec<f64> = all[all.len() - v..].iter().map(|x| x.as_f64()).collect();
        Ok(log_softmax(&last))
    }
}
