mod common;

use common::{assert_all, persistence_suite, tiny_run};
use dgcn::data::{generate_corpus, SyntheticSpec, Vocabulary};
use dgcn::experiment::{build_corpus, continue_training, model_config, prepare_inputs, train_model, Budget, Inputs};
use dgcn::model::{prepare, CaptionModel, ModelConfig};
use dgcn::train::{caption_all, Trainer};
use dgcn::transformer::DecodeOptions;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn persistence_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    assert_all(&persistence_suite::run(dir.path()));
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let cfg = tiny_run(50, &["curriculum.enabled=false"]);
    let corpus = build_corpus(&cfg).unwrap();
    let mc = model_config(&cfg, &corpus.vocab, cfg.model.encoder, cfg.model.decoder);
    let inputs: Inputs<f32> = prepare_inputs(&corpus, &mc).unwrap();
    let run = |seed| train_model(&mc, &cfg.train, &inputs, &corpus.vocab, &cfg.decode, seed, Budget::Epochs(2)).unwrap();
    let (a, la) = run(1);
    let (b, lb) = run(1);
    let (c, _) = run(2);
    let bits = |t: &Trainer<f32>| t.model.params.iter().flat_map(|(_, p)| p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
    assert_eq!(format!("{la:?}"), format!("{lb:?}"));
}

#[test]
fn resumed_training_continues_the_step_counter() {
    let cfg = tiny_run(50, &["curriculum.enabled=false"]);
    let corpus = build_corpus(&cfg).unwrap();
    let mc = model_config(&cfg, &corpus.vocab, cfg.model.encoder, cfg.model.decoder);
    let inputs: Inputs<f32> = prepare_inputs(&corpus, &mc).unwrap();
    let (tr, log) = train_model(&mc, &cfg.train, &inputs, &corpus.vocab, &cfg.decode, 0, Budget::Epochs(1)).unwrap();
    let per_epoch = inputs.train.len().div_ceil(cfg.train.batch_size) as u64;
    assert_eq!(tr.step, per_epoch);
    assert_eq!(log.len(), 1);
    let ck = tr.to_checkpoint(&corpus.vocab).unwrap();
    let (mut back, _) = Trainer::<f32>::from_checkpoint(&ck).unwrap();
    let more = continue_training(&mut back, &inputs, &corpus.vocab, &cfg.decode, Budget::Epochs(3)).unwrap();
    assert_eq!(back.step, 3 * per_epoch);
    assert_eq!(more.iter().map(|r| r.index).collect::<Vec<_>>(), vec![2, 3]);
    assert_eq!(more.last().unwrap().step, 3 * per_epoch);
}

#[test]
fn caption_does_not_depend_on_region_order() {
    let spec = SyntheticSpec { feature_dim: 16, min_objects: 3, max_objects: 6, seed: 2, ..Default::default() };
    let samples = generate_corpus(&spec, 12).unwrap();
    let vocab = Vocabulary::build(samples.iter().flat_map(|s| s.references.iter().map(|r| r.iter().map(String::as_str))), 1);
    let mut cfg = ModelConfig { feature_dim: 16, vocab_size: vocab.len(), neighbors: 3, ..ModelConfig::toy() };
    cfg.relations.image_size = Some(spec.image_size());
    let data = prepare::<f64>(&samples, &vocab, &cfg).unwrap();
    let mut model = CaptionModel::<f64>::new(cfg.clone(), 8).unwrap();
    model.refresh_bank(&data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut shuffled = samples.clone();
    for s in &mut shuffled {
        s.regions.shuffle(&mut rng);
    }
    let permuted = prepare::<f64>(&shuffled, &vocab, &cfg).unwrap();
    let opts = DecodeOptions { max_len: 10, ..Default::default() };
    let a = caption_all(&model, &data, &opts).unwrap();
    let b = caption_all(&model, &permuted, &opts).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.tokens, y.tokens);
        for (p, q) in x.log_probs.iter().zip(&y.log_probs) {
            assert!((p - q).abs() < 1e-9);
        }
    }
}

#[test]
fn a_float64_model_survives_a_checkpoint_at_single_precision() {
    let spec = SyntheticSpec { feature_dim: 16, seed: 5, ..Default::default() };
    let samples = generate_corpus(&spec, 6).unwrap();
    let vocab = Vocabulary::build(samples.iter().flat_map(|s| s.references.iter().map(|r| r.iter().map(String::as_str))), 1);
    let mut cfg = ModelConfig { feature_dim: 16, vocab_size: vocab.len(), ..ModelConfig::toy() };
    cfg.relations.image_size = Some(spec.image_size());
    let data = prepare::<f64>(&samples, &vocab, &cfg).unwrap();
    let mut model = CaptionModel::<f64>::new(cfg, 1).unwrap();
    model.refresh_bank(&data).unwrap();
    let ck = dgcn::train::model_checkpoint(&model, &vocab).unwrap();
    let (back, v2) = dgcn::train::load_model::<f64>(&ck).unwrap();
    assert_eq!(v2, vocab);
    for ((n, a), (_, b)) in model.params.iter().zip(back.params.iter()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*y, *x as f32 as f64, "{n}");
        }
    }
}
