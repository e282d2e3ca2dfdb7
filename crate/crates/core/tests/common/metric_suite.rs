//! Caption metrics against the brute-force oracles and hand-computed cases.

use super::oracles;
use super::{random_sentence, words, Check};
use dgcn::metrics::{bleu, cider, lcs_len, rouge_l, BleuOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-9;
pub const CASES: usize = 50;

fn random_refs(rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let n = rng.random_range(1..=4);
    (0..n).map(|_| random_sentence(rng, 1, 9, 5)).collect()
}

/// Worst absolute difference per BLEU order over random cases.
pub fn bleu_errors(seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..CASES {
        let cand = random_sentence(&mut rng, 1, 9, 5);
        let refs = random_refs(&mut rng);
        for n in 1..=4 {
            let got = bleu(&cand, &refs, n, BleuOptions::default()).unwrap();
            worst[n - 1] = worst[n - 1].max((got - oracles::bleu(&cand, &refs, n)).abs());
        }
    }
    worst
}

pub fn rouge_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let cand = random_sentence(&mut rng, 1, 10, 4);
        let refs = random_refs(&mut rng);
        for r in &refs {
            worst = worst.max((lcs_len(&cand, r) as f64 - oracles::lcs(&cand, r) as f64).abs());
        }
        worst = worst.max((rouge_l(&cand, &refs) - oracles::rouge_l(&cand, &refs)).abs());
    }
    worst
}

/// Each case is a small corpus; every image's score is compared.
pub fn cider_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let images = rng.random_range(2..=5);
        let refs: Vec<Vec<Vec<String>>> = (0..images).map(|_| random_refs(&mut rng)).collect();
        let cands: Vec<Vec<String>> = refs.iter().map(|rs| if rng.random_bool(0.3) { rs[0].clone() } else { random_sentence(&mut rng, 1, 9, 6) }).collect();
        let got = cider(&cands, &refs).unwrap();
        for (g, w) in got.per_image.iter().zip(oracles::cider(&cands, &refs)) {
            worst = worst.max((g - w).abs());
        }
    }
    worst
}

pub fn hand_bleu1() -> f64 {
    bleu(&words("the the the the the the the"), &[words("the cat is on the mat")], 1, BleuOptions::default()).unwrap()
}

pub fn hand_rouge() -> f64 {
    rouge_l(&words("a b c d"), &[words("a c b d")])
}

pub fn hand_cider() -> f64 {
    let refs = vec![vec![words("a red cube left of a blue ball")], vec![words("two green cones near one yellow torus")]];
    let cands = vec![refs[0][0].clone(), words("nothing matches here")];
    cider(&cands, &refs).unwrap().per_image[0]
}

pub fn run(seed: u64) -> Vec<Check> {
    let mut out: Vec<Check> = bleu_errors(seed).iter().enumerate().map(|(k, &e)| Check::within(format!("BLEU-{} vs oracle", k + 1), e, TOL)).collect();
    out.push(Check::within("ROUGE-L vs oracle", rouge_error(seed + 1), TOL));
    out.push(Check::within("CIDEr vs oracle", cider_error(seed + 2), TOL));
    out.push(Check::within("clipped unigram BLEU-1 = 2/7", (hand_bleu1() - 2.0 / 7.0).abs(), TOL));
    out.push(Check::within("ROUGE-L hand case = 0.75", (hand_rouge() - 0.75).abs(), TOL));
    out.push(Check::within("CIDEr perfect match = 10", (hand_cider() - 10.0).abs(), TOL));
    out
}
