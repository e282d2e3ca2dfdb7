//! Decoder-side contracts: causal masking, encoder equivariance, beam
//! search optimality and a one-sample overfit.

use super::Check;
use dgcn::data::vocab::{BOS, EOS, PAD};
use dgcn::data::{generate_corpus, SyntheticSpec, Vocabulary};
use dgcn::model::{prepare, CaptionModel, ModelConfig};
use dgcn::nn::{ParamStore, Session};
use dgcn::tensor::Tensor;
use dgcn::train::{dataset_loss, TrainConfig, Trainer};
use dgcn::transformer::{beam_search, log_softmax, CaptionState, DecodeOptions, Decoder, Encoder};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: [usize; 2], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::new(shape, (0..shape[0] * shape[1]).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Positions `(t, prefix position)` whose logits moved when a later token
/// changed; exact comparison.
pub fn causal_violations(seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (vocab, d) = (11, 8);
    let mut store = ParamStore::<f64>::new();
    let dec = Decoder::new(&mut store, "decoder", vocab, 6, d, 2, 2, &mut rng).unwrap();
    let memory = random([5, d], &mut rng);
    let logits = |ids: &[usize]| {
        let mut s = Session::new(&store, false);
        let m = s.tape.constant(memory.clone());
        let y = dec.forward(&mut s, m, ids).unwrap();
        s.tape.value(y).to_vec()
    };
    let mut bad = 0;
    for _ in 0..20 {
        let len = rng.random_range(2..=9);
        let ids: Vec<usize> = std::iter::once(BOS).chain((1..len).map(|_| rng.random_range(3..vocab))).collect();
        let base = logits(&ids);
        for t in 1..len {
            let mut changed = ids.clone();
            changed[t] = 3 + (changed[t] - 3 + 1 + rng.random_range(0..vocab - 4)) % (vocab - 3);
            let other = logits(&changed);
            bad += (0..t).filter(|&p| base[p * vocab..(p + 1) * vocab] != other[p * vocab..(p + 1) * vocab]).count();
        }
    }
    bad
}

/// Largest deviation between `encode(P x)` and `P encode(x)`.
pub fn equivariance_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 8;
    let mut store = ParamStore::<f64>::new();
    let enc = Encoder::new(&mut store, "encoder", d, 2, 2, &mut rng).unwrap();
    let run = |x: Tensor<f64>| {
        let mut s = Session::new(&store, false);
        let v = s.tape.constant(x);
        let y = enc.forward(&mut s, v).unwrap();
        s.tape.value(y).to_vec()
    };
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let o = rng.random_range(1..=36);
        let x = random([o, d], &mut rng);
        let mut perm: Vec<usize> = (0..o).collect();
        perm.shuffle(&mut rng);
        let px = Tensor::new([o, d], perm.iter().flat_map(|&i| x.data()[i * d..(i + 1) * d].to_vec()).collect()).unwrap();
        let y = run(x);
        let py = run(px);
        for (row, &i) in perm.iter().enumerate() {
            for c in 0..d {
                worst = worst.max((py[row * d + c] - y[i * d + c]).abs());
            }
        }
    }
    worst
}

/// Next-token distribution that depends on the whole prefix through a
/// seeded draw, so every branch of the search tree differs.
pub fn table_scorer(vocab: usize, seed: u64) -> impl FnMut(&[usize]) -> dgcn::Result<Vec<f64>> {
    move |prefix: &[usize]| {
        let key = prefix.iter().fold(seed, |h, &t| h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        Ok(log_softmax(&(0..vocab).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>()))
    }
}

/// Best complete sequence by enumeration of every path, scored like the
/// beam (`Σ log p / len^alpha`, ties to the lexicographically smaller).
pub fn exhaustive_best(scorer: &mut impl FnMut(&[usize]) -> dgcn::Result<Vec<f64>>, vocab: usize, max_len: usize, alpha: f64) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut stack = vec![(vec![BOS], Vec::<f64>::new())];
    while let Some((tokens, lps)) = stack.pop() {
        let done = tokens.len() >= max_len || tokens.last() == Some(&EOS);
        if done {
            let total: f64 = lps.iter().sum();
            let score = if alpha == 0.0 { total } else { total / (lps.len() as f64).powf(alpha) };
            let better = match &best {
                None => true,
                Some((b, t)) => score > *b || (score == *b && tokens < *t),
            };
            if better {
                best = Some((score, tokens));
            }
            continue;
        }
        let lp = scorer(&tokens).unwrap();
        for t in (0..vocab).filter(|&t| t != PAD && t != BOS) {
            let mut next = tokens.clone();
            next.push(t);
            let mut l = lps.clone();
            l.push(lp[t]);
            stack.push((next, l));
        }
    }
    best.unwrap().1
}

/// Cases where beam search with width >= V missed the enumerated optimum.
pub fn beam_mismatches(seed: u64) -> usize {
    let mut bad = 0;
    for case in 0..60u64 {
        let vocab = 5 + (case % 2) as usize;
        let max_len = 1 + (case % 3) as usize;
        let alpha = if case % 4 == 3 { 0.7 } else { 0.0 };
        let mut scorer = table_scorer(vocab, seed * 1000 + case);
        let want = exhaustive_best(&mut scorer, vocab, max_len, alpha);
        let opts = DecodeOptions { beam_width: vocab, max_len, length_alpha: alpha };
        let got: CaptionState = beam_search(&mut scorer, &opts).unwrap();
        if got.tokens != want {
            bad += 1;
        }
    }
    bad
}

/// Teacher-forced losses over `steps` optimiser steps on one sample with a
/// single reference.
pub fn overfit_curve(seed: u64, steps: usize) -> Vec<f64> {
    let spec = SyntheticSpec { feature_dim: 16, seed, ..Default::default() };
    let mut samples = generate_corpus(&spec, 1).unwrap();
    samples[0].references.truncate(1);
    let vocab = Vocabulary::build(samples[0].references.iter().map(|r| r.iter().map(String::as_str)), 1);
    let mut cfg = ModelConfig { feature_dim: 16, vocab_size: vocab.len(), ..ModelConfig::toy() };
    cfg.relations.image_size = Some(spec.image_size());
    let data = prepare::<f64>(&samples, &vocab, &cfg).unwrap();
    let mut model = CaptionModel::new(cfg, seed).unwrap();
    model.refresh_bank(&data).unwrap();
    let train = TrainConfig { lr: 1e-2, warmup_frac: 0.0, batch_size: 1, seed, ..Default::default() };
    let mut trainer = Trainer::new(model, train, steps as u64).unwrap();
    let mut curve = vec![dataset_loss(&trainer.model, &data, &[0]).unwrap()];
    for _ in 0..steps {
        trainer.train_step(&data, &[0]).unwrap();
        curve.push(dataset_loss(&trainer.model, &data, &[0]).unwrap());
    }
    curve
}

pub fn run(seed: u64) -> Vec<Check> {
    let causal = causal_violations(seed);
    let beam = beam_mismatches(seed);
    let curve = overfit_curve(seed, 50);
    let reached = curve.iter().position(|&l| l <= 0.05);
    vec![
        Check::new("causal mask: earlier logits bit-identical", causal == 0, format!("{causal} moved positions")),
        Check::within("encoder permutation equivariance", equivariance_error(seed + 1), 1e-12),
        Check::new("beam (width >= V, max_len <= 3) = exhaustive optimum", beam == 0, format!("{beam} of 60 cases differ")),
        Check::new(
            "one-sample overfit to loss <= 0.05 within 50 steps",
            reached.is_some(),
            match reached {
                Some(s) => format!("loss {:.4} after {s} steps (start {:.3})", curve[s], curve[0]),
                None => format!("loss {:.4} after 50 steps (start {:.3})", curve[50], curve[0]),
            },
        ),
    ]
}
