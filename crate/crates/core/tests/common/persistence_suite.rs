//! Byte-level round trips of checkpoints and region features, and
//! bit-exact reruns of seeded pipelines.

use std::fs;
use std::path::Path;

use super::{tiny_run, Check};
use dgcn::checkpoint::Checkpoint;
use dgcn::data::{read_dgrf, write_dgrf, FeatureRecord};
use dgcn::experiment::{ablate, build_corpus, model_config, prepare_inputs, run_pipeline, AblationVariant, Inputs};
use dgcn::graph::{BBox, Region};
use dgcn::train::Trainer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Trains a few steps, saves, restores and saves again. Returns whether the
/// two files are identical and every restored parameter and moment matches
/// the original bit for bit.
pub fn checkpoint_round_trip(dir: &Path) -> (bool, bool) {
    let cfg = tiny_run(40, &["curriculum.enabled=false"]);
    let corpus = build_corpus(&cfg).unwrap();
    let mc = model_config(&cfg, &corpus.vocab, cfg.model.encoder, cfg.model.decoder);
    let inputs: Inputs<f32> = prepare_inputs(&corpus, &mc).unwrap();
    let mut model = dgcn::model::CaptionModel::<f32>::new(mc, 1).unwrap();
    model.refresh_bank(&inputs.train).unwrap();
    let mut tr = Trainer::new(model, cfg.train.clone(), 10).unwrap();
    tr.train_steps(&inputs.train, &(0..inputs.train.len()).collect::<Vec<_>>(), 3).unwrap();
    let first = dir.join("a.ckpt");
    let second = dir.join("b.ckpt");
    tr.to_checkpoint(&corpus.vocab).unwrap().save(&first).unwrap();
    let (back, vocab) = Trainer::<f32>::from_checkpoint(&Checkpoint::load(&first).unwrap()).unwrap();
    back.to_checkpoint(&vocab).unwrap().save(&second).unwrap();
    let same_file = fs::read(&first).unwrap() == fs::read(&second).unwrap();
    let bits = |t: &Trainer<f32>| -> Vec<u32> {
        let mut v: Vec<u32> = t.model.params.iter().flat_map(|(_, p)| p.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect();
        v.extend(t.adam.m.iter().chain(&t.adam.v).flat_map(|b| b.iter().map(|x| x.to_bits())));
        v
    };
    let same_state = bits(&tr) == bits(&back) && vocab == corpus.vocab && back.step == tr.step && back.model.bank == tr.model.bank;
    (same_file, same_state)
}

/// Random records with awkward floats (negative zero, subnormals, large
/// magnitudes).
pub fn random_records(seed: u64) -> Vec<FeatureRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specials = [-0.0f32, f32::MIN_POSITIVE / 8.0, 3.4e38, -1.0e-30, 1.0 / 3.0];
    (0..25)
        .map(|i| {
            let c = 1 + i % 4;
            let regions = (0..rng.random_range(1..6))
                .map(|_| {
                    let x = rng.random_range(0.0f32..50.0);
                    let y = rng.random_range(0.0f32..50.0);
                    Region {
                        feature: (0..c).map(|_| if rng.random_bool(0.2) { specials[rng.random_range(0..specials.len())] } else { rng.random() }).collect(),
                        bbox: BBox::new(x, y, x + rng.random_range(0.5f32..10.0), y + rng.random_range(0.5f32..10.0)),
                        confidence: rng.random(),
                    }
                })
                .collect();
            FeatureRecord { id: rng.random::<u64>() >> 1, regions }
        })
        .collect()
}

pub fn dgrf_round_trip(seed: u64) -> bool {
    let records = random_records(seed);
    let mut bytes = Vec::new();
    write_dgrf(&mut bytes, &records).unwrap();
    let back = read_dgrf(&bytes, 36).unwrap();
    let mut again = Vec::new();
    write_dgrf(&mut again, &back).unwrap();
    bytes == again
        && back.len() == records.len()
        && back.iter().zip(&records).all(|(a, b)| {
            a.id == b.id
                && a.regions.len() == b.regions.len()
                && a.regions.iter().zip(&b.regions).all(|(x, y)| {
                    x.feature.iter().map(|v| v.to_bits()).eq(y.feature.iter().map(|v| v.to_bits())) && x.bbox == y.bbox && x.confidence == y.confidence
                })
        })
}

/// Files in `a` that are missing from `b` or differ from it.
pub fn differing_files(a: &Path, b: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![a.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(a).unwrap();
            if fs::read(&p).ok() != fs::read(b.join(rel)).ok() {
                out.push(rel.display().to_string());
            }
        }
    }
    out
}

/// Runs the curriculum pipeline and a two-variant ablation twice each with
/// the same seed; returns the output files that differ between reruns.
pub fn rerun_differences(dir: &Path) -> (usize, Vec<String>) {
    let cfg = tiny_run(60, &["seeds=[4]"]);
    let corpus = build_corpus(&cfg).unwrap();
    let mc = model_config(&cfg, &corpus.vocab, cfg.model.encoder, cfg.model.decoder);
    let inputs: Inputs<f32> = prepare_inputs(&corpus, &mc).unwrap();
    let variants = ["Dual-GCN + Transformer + CL", "F_obj + Transformer"].map(|v| v.parse::<AblationVariant>().unwrap());
    for run in ["first", "second"] {
        let out = dir.join(run);
        run_pipeline(&cfg, &corpus, &inputs, cfg.seed, Some(&out.join("train"))).unwrap();
        ablate(&cfg, &corpus, &variants).unwrap().write(&out.join("ablate")).unwrap();
    }
    let mut files = 0;
    let mut stack = vec![dir.join("first")];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files += 1;
            }
        }
    }
    (files, differing_files(&dir.join("first"), &dir.join("second")))
}

pub fn run(dir: &Path) -> Vec<Check> {
    let (same_file, same_state) = checkpoint_round_trip(dir);
    let dgrf = (0..5).all(dgrf_round_trip);
    let (files, diff) = rerun_differences(dir);
    vec![
        Check::new("checkpoint round trip bit-exact", same_file && same_state, format!("file identical: {same_file}, state identical: {same_state}")),
        Check::new("DGRF round trip bit-exact", dgrf, if dgrf { "5 files".to_string() } else { "mismatch".into() }),
        Check::new("fixed-seed rerun reproduces every output file", diff.is_empty() && files >= 8, format!("{files} files compared, differing: {diff:?}")),
    ]
}
