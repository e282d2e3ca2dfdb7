//! Graph encoders against dense-matrix oracles, neighbour search against a
//! full sort, and the containment duality of the relation classifier.

use super::Check;
use dgcn::graph::{
    build_spatial_graph_from_boxes, classify_relation, image_gcn_forward, knn_select, object_gcn_forward, BBox, ImageBank, ImageGcnParams, ObjectGcnParams,
    Relation, RelationPolicy, NUM_RELATIONS,
};
use dgcn::nn::{ParamStore, Session};
use dgcn::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-5;
pub const GRAPHS: usize = 50;
pub const IMAGE: f64 = 10.0;

/// Box with corners on a half-unit grid so that ties and containment occur.
pub fn random_box<R: Rng>(rng: &mut R) -> BBox {
    let x0 = rng.random_range(0..18) as f32 / 2.0;
    let y0 = rng.random_range(0..18) as f32 / 2.0;
    let w = rng.random_range(1..=8) as f32 / 2.0;
    let h = rng.random_range(1..=8) as f32 / 2.0;
    BBox::new(x0, y0, (x0 + w).min(IMAGE as f32), (y0 + h).min(IMAGE as f32))
}

/// A box strictly inside `outer` (shares at most some edges with it).
pub fn box_inside<R: Rng>(rng: &mut R, outer: &BBox) -> BBox {
    loop {
        let xs = [rng.random_range(outer.x_min..=outer.x_max), rng.random_range(outer.x_min..=outer.x_max)];
        let ys = [rng.random_range(outer.y_min..=outer.y_max), rng.random_range(outer.y_min..=outer.y_max)];
        let b = BBox::new(xs[0].min(xs[1]), ys[0].min(ys[1]), xs[0].max(xs[1]), ys[0].max(ys[1]));
        if b.validate().is_ok() && b != *outer {
            return b;
        }
    }
}

pub fn policy() -> RelationPolicy {
    RelationPolicy { image_size: Some((IMAGE, IMAGE)), ..RelationPolicy::default() }
}

fn matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn to_tensor(m: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::new([m.len(), m[0].len()], m.concat()).unwrap()
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Object GCN output: `relu( Σ_r A_r X W_r + (A_r 1) b_r )` with the
/// adjacencies filled pair by pair from the classifier.
pub fn dense_object_gcn(boxes: &[BBox], x: &[Vec<f64>], weights: &[Tensor<f64>], biases: &[Tensor<f64>], policy: &RelationPolicy) -> Vec<Vec<f64>> {
    let n = boxes.len();
    let out_dim = biases[0].numel();
    let diag = IMAGE.hypot(IMAGE);
    let mut adj = vec![vec![vec![0.0; n]; n]; NUM_RELATIONS];
    for dst in 0..n {
        for src in 0..n {
            let rel = if src == dst {
                Relation::Identity
            } else {
                classify_relation(&boxes[src], &boxes[dst], policy.iou_threshold, policy.distance_fraction, diag).unwrap()
            };
            if let Some(r) = rel.index() {
                adj[r][dst][src] = 1.0;
            }
        }
    }
    let in_dim = x[0].len();
    let mut out = vec![vec![0.0; out_dim]; n];
    for r in 0..NUM_RELATIONS {
        let w = weights[r].data();
        let b = biases[r].data();
        for i in 0..n {
            for j in 0..n {
                if adj[r][i][j] == 0.0 {
                    continue;
                }
                for o in 0..out_dim {
                    let mut acc = b[o];
                    for c in 0..in_dim {
                        acc += x[j][c] * w[c * out_dim + o];
                    }
                    out[i][o] += adj[r][i][j] * acc;
                }
            }
        }
    }
    out.iter().map(|row| row.iter().map(|&v| relu(v)).collect()).collect()
}

/// Largest deviation of `object_gcn_forward` from the dense oracle.
pub fn object_gcn_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, d) = (6, 4);
    let mut store = ParamStore::<f64>::new();
    let params = ObjectGcnParams::new(&mut store, "gcn", c, d, &mut rng);
    let weights: Vec<_> = params.relations.iter().map(|l| store.get(l.w).clone()).collect();
    let biases: Vec<_> = params.relations.iter().map(|l| store.get(l.b).clone()).collect();
    let mut worst = 0.0f64;
    for _ in 0..GRAPHS {
        let n = rng.random_range(1..=10);
        let mut boxes: Vec<BBox> = (0..n).map(|_| random_box(&mut rng)).collect();
        if n > 1 && rng.random_bool(0.5) {
            boxes[1] = box_inside(&mut rng, &boxes[0]);
        }
        let x = matrix(n, c, &mut rng);
        let graph = build_spatial_graph_from_boxes(&boxes, &policy(), 36).unwrap();
        let mut s = Session::new(&store, false);
        let feats = s.tape.constant(to_tensor(&x));
        let y = object_gcn_forward(&mut s, &graph, feats, &params).unwrap();
        let got = s.tape.value(y).to_vec();
        let want = dense_object_gcn(&boxes, &x, &weights, &biases, &policy()).concat();
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
        if got.len() != want.len() {
            return f64::INFINITY;
        }
    }
    worst
}

/// `k` nearest bank rows by a full sort on `(squared distance, id)`.
pub fn exhaustive_knn(points: &[(u64, Vec<f64>)], query: u64, k: usize) -> Vec<u64> {
    let q = &points.iter().find(|p| p.0 == query).unwrap().1;
    let mut all: Vec<(f64, u64)> = points.iter().filter(|p| p.0 != query).map(|(id, v)| (v.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), *id)).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.into_iter().take(k).map(|p| p.1).collect()
}

/// Points on a coarse grid so that distance ties are common.
pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<(u64, Vec<f64>)> {
    let mut ids: Vec<u64> = (0..n as u64 * 3).collect();
    ids.shuffle(rng);
    ids.truncate(n);
    ids.into_iter().map(|id| (id, (0..dim).map(|_| rng.random_range(-3..=3) as f64).collect())).collect()
}

pub fn bank_of(points: &[(u64, Vec<f64>)]) -> ImageBank<f64> {
    let mut bank = ImageBank::new(points[0].1.len());
    for (id, v) in points {
        bank.push(*id, v).unwrap();
    }
    bank
}

/// Number of queries whose neighbour list differs from the exhaustive one.
pub fn knn_mismatches(seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..GRAPHS {
        let n = rng.random_range(2..=200);
        let points = random_points(&mut rng, n, 3);
        let bank = bank_of(&points);
        for _ in 0..5 {
            let k = rng.random_range(1..=12);
            let q = points[rng.random_range(0..n)].0;
            let got: Vec<u64> = knn_select(q, &bank, k).unwrap().neighbors.iter().map(|nb| nb.id).collect();
            if got != exhaustive_knn(&points, q, k) {
                bad += 1;
            }
        }
    }
    bad
}

/// Image GCN output: `relu( Σ_{centre and neighbours} v W + b )`, with the
/// neighbours from the exhaustive search.
pub fn image_gcn_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 5;
    let mut store = ParamStore::<f64>::new();
    let params = ImageGcnParams::new(&mut store, "img", d, &mut rng);
    let w = store.get(params.linear.w).data().to_vec();
    let b = store.get(params.linear.b).data().to_vec();
    let mut worst = 0.0f64;
    for _ in 0..GRAPHS {
        let n = rng.random_range(2..=40);
        let points: Vec<(u64, Vec<f64>)> = (0..n as u64).map(|id| (id, (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
        let bank = bank_of(&points);
        let k = rng.random_range(1..=8);
        let q = rng.random_range(0..n as u64);
        let graph = knn_select(q, &bank, k).unwrap();
        let mut rows = vec![points[q as usize].1.clone()];
        rows.extend(exhaustive_knn(&points, q, k).into_iter().map(|id| points[id as usize].1.clone()));
        let want: Vec<f64> = (0..d).map(|o| relu(rows.iter().map(|v| b[o] + (0..d).map(|c| v[c] * w[c * d + o]).sum::<f64>()).sum())).collect();
        let mut s = Session::new(&store, false);
        let center = s.tape.constant(Tensor::new([d], points[q as usize].1.clone()).unwrap());
        let y = image_gcn_forward(&mut s, center, &graph, &params).unwrap();
        for (g, w) in s.tape.value(y).iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    worst
}

/// Pairs violating `inside(a, b) ⇔ cover(b, a)`, out of `pairs`.
pub fn duality_violations(seed: u64, pairs: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag = IMAGE.hypot(IMAGE);
    let mut bad = 0;
    for i in 0..pairs {
        let a = random_box(&mut rng);
        let b = match i % 3 {
            0 => box_inside(&mut rng, &a),
            1 => a,
            _ => random_box(&mut rng),
        };
        let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        let ab = classify_relation(&a, &b, 0.5, 0.5, diag).unwrap();
        let ba = classify_relation(&b, &a, 0.5, 0.5, diag).unwrap();
        if (ab == Relation::Inside) != (ba == Relation::Cover) || (ab == Relation::Cover) != (ba == Relation::Inside) {
            bad += 1;
        }
    }
    bad
}

pub fn run(seed: u64) -> Vec<Check> {
    let knn = knn_mismatches(seed + 1);
    let dual = duality_violations(seed + 3, 1000);
    vec![
        Check::within("object GCN vs dense oracle (50 graphs)", object_gcn_error(seed), TOL),
        Check::within("image GCN vs dense oracle (50 graphs)", image_gcn_error(seed + 2), TOL),
        Check::new("kNN vs exhaustive search (corpora <= 200)", knn == 0, format!("{knn} mismatching queries of 250")),
        Check::new("inside <=> cover duality (1000 pairs)", dual == 0, format!("{dual} violations")),
    ]
}
