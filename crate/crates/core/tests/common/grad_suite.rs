//! Gradient checks shared by the integration tests and the acceptance run:
//! every differentiable primitive, and whole captioning models in `f64`.

#![allow(dead_code)]

use dgcn::data::{generate_corpus, SyntheticSpec, Vocabulary};
use dgcn::model::{prepare, CaptionModel, DecoderKind, EncoderMode, ModelConfig};
use dgcn::nn::grad_check_param;
use dgcn::tensor::{grad_check, Tape, Tensor, Var};
use dgcn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-6;

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted_sum(t: &mut Tape<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let w = t.constant(random(&t.shape(y).to_vec(), seed));
    let p = t.mul(y, w)?;
    t.sum(p)
}

type OpFn = fn(&mut Tape<'_, f64>, Var) -> Result<Var>;

/// `(name, input shape, op)`; each op output is contracted against a fixed
/// random weight before checking.
fn primitives() -> Vec<(&'static str, Vec<usize>, OpFn)> {
    vec![
        ("matmul (left)", vec![3, 4], |t, x| {
            let b = t.constant(random(&[4, 2], 12));
            t.matmul(x, b)
        }),
        ("matmul (right)", vec![4, 2], |t, x| {
            let a = t.constant(random(&[3, 4], 14));
            t.matmul(a, x)
        }),
        ("matmul_nt", vec![3, 4], |t, x| {
            let b = t.constant(random(&[5, 4], 16));
            let l = t.matmul_nt(x, b)?;
            let r = t.matmul_nt(b, x)?;
            let rt = t.transpose(r)?;
            t.add(l, rt)
        }),
        ("transpose+reshape", vec![2, 6], |t, x| {
            let y = t.transpose(x)?;
            t.reshape(y, &[3, 4])
        }),
        ("add/sub/mul/scale", vec![3, 3], |t, x| {
            let c = t.constant(random(&[3, 3], 19));
            let a = t.add(x, c)?;
            let m = t.mul(a, x)?;
            let s = t.sub(m, c)?;
            t.scale(s, -1.7)
        }),
        ("add_bias", vec![2, 3, 4], |t, x| {
            let b = t.constant(random(&[4], 21));
            t.add_bias(x, b)
        }),
        ("relu", vec![4, 4], |t, x| {
            let shift = t.constant(random(&[4, 4], 25).map(|v| if v >= 0.0 { 1.5 } else { -1.5 }));
            let y = t.add(x, shift)?;
            t.relu(y)
        }),
        ("sigmoid", vec![3, 5], |t, x| t.sigmoid(x)),
        ("tanh", vec![3, 5], |t, x| t.tanh(x)),
        ("softmax", vec![2, 3, 4], |t, x| t.softmax(x, 1)),
        ("masked softmax", vec![3, 3], |t, x| t.softmax_masked(x, &[true, false, false, true, true, false, true, true, true])),
        ("layer_norm", vec![3, 5], |t, x| {
            let g = t.constant(random(&[5], 32));
            let b = t.constant(random(&[5], 33));
            t.layer_norm(x, g, b, 1e-5)
        }),
        ("layer_norm (gain)", vec![5], |t, x| {
            let inp = t.constant(random(&[3, 5], 35));
            let b = t.constant(random(&[5], 36));
            t.layer_norm(inp, x, b, 1e-5)
        }),
        ("embedding", vec![5, 3], |t, x| t.embedding(x, &[4, 0, 4, 2])),
        ("concat", vec![2, 3], |t, x| {
            let c = t.constant(random(&[2, 2], 42));
            t.concat(&[x, c, x], 1)
        }),
        ("slice", vec![4, 5], |t, x| t.slice(x, 1, 1, 3)),
        ("mean/sum_axis", vec![3, 4, 2], |t, x| {
            let m = t.mean(x, 1)?;
            t.sum_axis(m, 0)
        }),
        ("gather/scatter rows", vec![4, 3], |t, x| {
            let g = t.gather_rows(x, &[3, 0, 3, 1])?;
            t.scatter_add_rows(g, &[0, 2, 2, 1], 3)
        }),
        ("repeat_rows", vec![3], |t, x| t.repeat_rows(x, 4)),
        ("dropout", vec![4, 4], |t, x| {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            t.dropout(x, 0.3, true, &mut rng)
        }),
    ]
}

/// Relative error of every primitive.
pub fn primitive_errors() -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = primitives()
        .into_iter()
        .enumerate()
        .map(|(k, (name, shape, op))| {
            let x = random(&shape, 1000 + k as u64);
            let err = grad_check(
                |t, x| {
                    let y = op(t, x)?;
                    weighted_sum(t, y, 2000 + k as u64)
                },
                &x,
                H,
            )
            .unwrap();
            (name.to_string(), err)
        })
        .collect();
    let x = random(&[4, 5], 48);
    out.push(("cross_entropy".into(), grad_check(|t, x| t.cross_entropy(x, &[1, 0, 4, 2], Some(0)), &x, H).unwrap()));
    out
}

/// Gradient check over every parameter of a small `f64` model whose loss runs
/// the whole pipeline down to the cross-entropy. `max_rel_error` treats all
/// parameters as one vector, `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
/// The per-coordinate figure is informative only: coordinates whose gradient
/// sits near the `ε·|loss|/h` round-off floor of the central difference
/// cannot reach a small relative error however exact the backward pass is.
pub struct CompositeResult {
    pub name: String,
    pub params: usize,
    pub max_rel_error: f64,
    pub gradient_norm: f64,
    pub worst_coordinate: f64,
    pub worst: String,
}

pub fn tiny_config(vocab: usize, encoder: EncoderMode, decoder: DecoderKind) -> ModelConfig {
    ModelConfig {
        feature_dim: 16,
        graph_dim: 4,
        d_model: 8,
        heads: 2,
        layers: 1,
        d_embed: 6,
        vocab_size: vocab,
        neighbors: 2,
        encoder,
        decoder,
        ..Default::default()
    }
}

pub fn composite_errors() -> Vec<CompositeResult> {
    let spec = SyntheticSpec { feature_dim: 16, min_objects: 2, max_objects: 3, seed: 4, ..Default::default() };
    let samples = generate_corpus(&spec, 5).unwrap();
    let vocab = Vocabulary::build(samples.iter().flat_map(|s| s.references.iter().map(|r| r.iter().map(String::as_str))), 1);
    let cases = [
        ("GCN_obj&F_img + Transformer", EncoderMode::GCN_OBJ_F_IMG, DecoderKind::Transformer),
        ("Dual-GCN + Transformer", EncoderMode::DUAL_GCN, DecoderKind::Transformer),
        ("Dual-GCN + GRU", EncoderMode::DUAL_GCN, DecoderKind::Recurrent),
    ];
    cases
        .iter()
        .map(|&(name, enc, dec)| {
            let mut cfg = tiny_config(vocab.len(), enc, dec);
            cfg.relations.image_size = Some(spec.image_size());
            let inputs: &'static [_] = Vec::leak(prepare::<f64>(&samples, &vocab, &cfg).unwrap());
            let mut model = CaptionModel::<f64>::new(cfg, 3).unwrap();
            model.refresh_bank(inputs).unwrap();
            let mut store = model.params.clone();
            let (input, target) = (&inputs[0], &inputs[0].targets[0]);
            let ids: Vec<_> = store.ids().collect();
            let (mut diff2, mut ana2, mut num2) = (0.0, 0.0, 0.0);
            let mut worst = (0.0f64, String::new());
            for id in ids {
                let r = grad_check_param(&mut store, id, H, |s| model.loss(s, input, target)).unwrap();
                for (a, n) in r.analytic.iter().zip(&r.numeric) {
                    diff2 += (a - n).powi(2);
                    ana2 += a * a;
                    num2 += n * n;
                }
                if r.max_rel_error > worst.0 || r.max_rel_error.is_nan() {
                    let i = r.worst_index;
                    worst = (r.max_rel_error, format!("{}[{i}] analytic {:e} numeric {:e}", store.name(id), r.analytic[i], r.numeric[i]));
                }
            }
            let max_rel_error = diff2.sqrt() / ana2.sqrt().max(num2.sqrt()).max(1e-300);
            CompositeResult {
                name: name.into(),
                params: store.num_scalars(),
                max_rel_error,
                gradient_norm: ana2.sqrt(),
                worst_coordinate: worst.0,
                worst: worst.1,
            }
        })
        .collect()
}
