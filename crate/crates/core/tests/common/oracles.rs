//! Brute-force reference implementations. Deliberately naive: string keys,
//! linear scans and exhaustive enumeration.

#![allow(dead_code)]

pub fn grams(tokens: &[String], n: usize) -> Vec<String> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].join(" ")).collect()
}

fn count(list: &[String], g: &str) -> usize {
    list.iter().filter(|x| x.as_str() == g).count()
}

fn unique(list: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

pub fn bleu(cand: &[String], refs: &[Vec<String>], n: usize) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut logp = 0.0;
    for k in 1..=n {
        let cg = grams(cand, k);
        if cg.is_empty() {
            return 0.0;
        }
        let mut hit = 0;
        for g in unique(&cg) {
            let best = refs.iter().map(|r| count(&grams(r, k), &g)).max().unwrap_or(0);
            hit += count(&cg, &g).min(best);
        }
        if hit == 0 {
            return 0.0;
        }
        logp += (hit as f64 / cg.len() as f64).ln();
    }
    let c = cand.len() as f64;
    let mut r = refs[0].len() as f64;
    for x in refs {
        let l = x.len() as f64;
        if (l - c).abs() < (r - c).abs() || ((l - c).abs() == (r - c).abs() && l < r) {
            r = l;
        }
    }
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (logp / n as f64).exp()
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|x| x == *s))
}

/// LCS by enumerating every subset of the shorter sequence.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1u32 << short.len()) {
        let pick: Vec<&String> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| &short[i]).collect();
        if pick.len() > best && is_subsequence(&pick, long) {
            best = pick.len();
        }
    }
    best
}

pub fn rouge_l(cand: &[String], refs: &[Vec<String>]) -> f64 {
    let beta2 = 1.44;
    let mut best = 0.0f64;
    for r in refs {
        let l = lcs(cand, r) as f64;
        if l == 0.0 {
            continue;
        }
        let p = l / cand.len() as f64;
        let rc = l / r.len() as f64;
        best = best.max((1.0 + beta2) * p * rc / (rc + beta2 * p));
    }
    best
}

pub fn cider(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Vec<f64> {
    let n_img = refs.len() as f64;
    let df = |g: &str, n: usize| -> f64 { refs.iter().filter(|rs| rs.iter().any(|r| grams(r, n).iter().any(|x| x == g))).count() as f64 };
    let vector = |toks: &[String], n: usize| -> Vec<(String, f64)> {
        let gs = grams(toks, n);
        unique(&gs)
            .into_iter()
            .map(|g| {
                let w = count(&gs, &g) as f64 * (n_img / df(&g, n).max(1.0)).ln();
                (g, w)
            })
            .collect()
    };
    let lookup = |v: &[(String, f64)], g: &str| v.iter().find(|(x, _)| x == g).map(|p| p.1);
    let norm = |v: &[(String, f64)]| v.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
    cands
        .iter()
        .zip(refs)
        .map(|(c, rs)| {
            let mut acc = 0.0;
            for r in rs {
                let pen = (-((c.len() as f64 - r.len() as f64).powi(2)) / 72.0).exp();
                let mut s = 0.0;
                for n in 1..=4 {
                    let vc = vector(c, n);
                    let vr = vector(r, n);
                    let mut dot = 0.0;
                    for (g, wc) in &vc {
                        if let Some(wr) = lookup(&vr, g) {
                            dot += wc.min(wr) * wr;
                        }
                    }
                    let den = norm(&vc) * norm(&vr);
                    if den != 0.0 {
                        s += dot / den * pen;
                    }
                }
                acc += s / 4.0;
            }
            10.0 * acc / rs.len() as f64
        })
        .collect()
}
