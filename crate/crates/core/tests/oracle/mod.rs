//! Slow, direct reference implementations used to check the fast paths.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use landmark_core::eval::GroundTruth;
use landmark_core::features::{InMemoryFeatures, LocalFeature, LocalFeatureSet};
use landmark_core::model::{ClassLabel, ImageId, LabelTable, Prediction, Submission};
use landmark_core::store::DescriptorStore;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn id(s: impl Into<String>) -> ImageId {
    ImageId::new(s).unwrap()
}

/// GAP recomputed from scratch: the ranking is rebuilt by selection, and
/// precision at each correct position is found by rescanning the prefix.
pub fn gap_bruteforce(sub: &Submission, truth: &GroundTruth) -> f64 {
    let mut remaining: Vec<(ImageId, ClassLabel, f64)> = sub
        .rows
        .iter()
        .filter_map(|r| r.guess.map(|g| (r.image.clone(), g.label, g.confidence)))
        .collect();
    let mut ranked = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            let (a, b) = (&remaining[i], &remaining[best]);
            if a.2 > b.2 || (a.2 == b.2 && a.0 < b.0) {
                best = i;
            }
        }
        ranked.push(remaining.remove(best));
    }
    let is_correct = |r: &(ImageId, ClassLabel, f64)| truth.entries[&r.0] == Some(r.1);
    let m = truth.entries.values().filter(|v| v.is_some()).count();
    if m == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..ranked.len() {
        if is_correct(&ranked[i]) {
            let hits = ranked[..=i].iter().filter(|r| is_correct(r)).count();
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / m as f64
}

/// Full sort of every train row per query.
pub fn knn_bruteforce(
    test: &DescriptorStore,
    train: &DescriptorStore,
    k: usize,
) -> Vec<(ImageId, Vec<(ImageId, f64)>)> {
    (0..test.len())
        .map(|q| {
            let mut all: Vec<(ImageId, f64)> = (0..train.len())
                .map(|t| {
                    let mut s = 0.0f64;
                    for (x, y) in test.row(q).iter().zip(train.row(t)) {
                        s += *x as f64 * *y as f64;
                    }
                    (train.id(t).clone(), s)
                })
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            all.truncate(k);
            (test.id(q).clone(), all)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CleanReference {
    pub kept: BTreeMap<ClassLabel, BTreeSet<ImageId>>,
    pub removed_small: usize,
    pub removed_no_pairs: usize,
    pub images_kept: usize,
    pub pairs_sampled: usize,
}

/// Adjacency lists from all pairs, BFS components, largest wins with the
/// smallest id breaking ties.
pub fn clean_bfs(
    labels: &LabelTable,
    store: &DescriptorStore,
    threshold: f64,
    min_size: usize,
    max_pairs: usize,
) -> CleanReference {
    let mut classes: BTreeMap<ClassLabel, Vec<ImageId>> = BTreeMap::new();
    for (img, c) in labels {
        classes.entry(*c).or_default().push(img.clone());
    }
    let mut out = CleanReference::default();
    for (c, mut members) in classes {
        if members.len() < min_size {
            out.removed_small += 1;
            continue;
        }
        members.sort();
        let n = members.len();
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let a = store.get(&members[i]).unwrap();
                let b = store.get(&members[j]).unwrap();
                let s: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
                if s > threshold {
                    adj[i].push(j);
                }
            }
        }
        let mut seen = vec![false; n];
        let mut best: Option<Vec<usize>> = None;
        for start in 0..n {
            if seen[start] || adj[start].is_empty() {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(v) = queue.pop_front() {
                comp.push(v);
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            if best.as_ref().is_none_or(|b| comp.len() > b.len()) {
                best = Some(comp);
            }
        }
        match best {
            None => out.removed_no_pairs += 1,
            Some(comp) => {
                let set: BTreeSet<usize> = comp.iter().copied().collect();
                let edges: usize = set.iter().map(|&v| adj[v].len()).sum::<usize>() / 2;
                out.pairs_sampled += edges.min(max_pairs);
                out.images_kept += set.len();
                out.kept
                    .insert(c, set.into_iter().map(|v| members[v].clone()).collect());
            }
        }
    }
    out
}

/// Mutual nearest neighbors by scanning both directions in full.
pub fn mutual_nn_bruteforce(a: &LocalFeatureSet, b: &LocalFeatureSet) -> Vec<(usize, usize)> {
    let d = |x: &[f32], y: &[f32]| -> f32 { x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum() };
    let nearest = |q: &[f32], pool: &LocalFeatureSet| -> usize {
        let mut best = 0;
        for j in 1..pool.len() {
            if d(q, &pool.features[j].descriptor) < d(q, &pool.features[best].descriptor) {
                best = j;
            }
        }
        best
    };
    let mut out = Vec::new();
    for i in 0..a.len() {
        let j = nearest(&a.features[i].descriptor, b);
        if nearest(&b.features[j].descriptor, a) == i {
            out.push((i, j));
        }
    }
    out
}

/// R-MAC by explicit region enumeration from the grid rule.
pub fn rmac_enumerate(h: usize, w: usize, c: usize, values: &[f64], levels: usize) -> Vec<f64> {
    let short = h.min(w);
    let long = h.max(w);
    let mut extra = 0;
    if long != short {
        let mut best = f64::INFINITY;
        for e in 1..=6usize {
            let step = (long - short) as f64 / e as f64;
            let overlap = (short as f64 - step) / short as f64;
            let err = (overlap - 0.4).abs();
            if err < best {
                best = err;
                extra = e;
            }
        }
    }
    let mut total = vec![0.0; c];
    for l in 1..=levels {
        let side = std::cmp::max(1, 2 * short / (l + 1));
        let (ny, nx) = match h.cmp(&w) {
            std::cmp::Ordering::Less => (l, l + extra),
            std::cmp::Ordering::Greater => (l + extra, l),
            std::cmp::Ordering::Equal => (l, l),
        };
        let positions = |dim: usize, n: usize| -> Vec<usize> {
            if n == 1 || dim <= side {
                return vec![0; n];
            }
            (0..n)
                .map(|k| (k * (dim - side)) as f64 / (n - 1) as f64)
                .map(|v| v.floor() as usize)
                .collect()
        };
        for y0 in positions(h, ny) {
            for x0 in positions(w, nx) {
                let mut m = vec![f64::NEG_INFINITY; c];
                for y in y0..(y0 + side).min(h) {
                    for x in x0..(x0 + side).min(w) {
                        for ch in 0..c {
                            m[ch] = m[ch].max(values[(y * w + x) * c + ch]);
                        }
                    }
                }
                let n = m.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    for ch in 0..c {
                        total[ch] += m[ch] / n;
                    }
                }
            }
        }
    }
    let n = total.iter().map(|v| v * v).sum::<f64>().sqrt();
    total.iter().map(|v| v / n).collect()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

pub fn one_hot(dim: usize, i: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// Affine pair with `inliers` exact correspondences and `outliers` random
/// ones. Each feature carries a one-hot descriptor, so matching is exact.
pub fn planted_affine_pair(
    rng: &mut ChaCha8Rng,
    inliers: usize,
    outliers: usize,
) -> (LocalFeatureSet, LocalFeatureSet) {
    let n = inliers + outliers;
    let (a, b, c, d) = loop {
        let m: [f64; 4] = [
            rng.gen_range(0.7..1.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(0.7..1.3),
        ];
        if (m[0] * m[3] - m[1] * m[2]).abs() > 0.3 {
            break (m[0], m[1], m[2], m[3]);
        }
    };
    let (tx, ty) = (rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
    let mut fa = Vec::with_capacity(n);
    let mut fb = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y) = (rng.gen_range(0.0..1000.0f64), rng.gen_range(0.0..1000.0f64));
        let (u, v) = if i < inliers {
            (a * x + b * y + tx, c * x + d * y + ty)
        } else {
            (rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0))
        };
        fa.push(LocalFeature {
            x: x as f32,
            y: y as f32,
            scale: 1.0,
            descriptor: one_hot(n, i),
        });
        fb.push(LocalFeature {
            x: u as f32,
            y: v as f32,
            scale: 1.0,
            descriptor: one_hot(n, i),
        });
    }
    (
        LocalFeatureSet::new(id("pa"), n, fa).unwrap(),
        LocalFeatureSet::new(id("pb"), n, fb).unwrap(),
    )
}

/// Two unrelated sets: random positions and random unit descriptors.
pub fn random_feature_pair(
    rng: &mut ChaCha8Rng,
    n: usize,
    dim: usize,
) -> (LocalFeatureSet, LocalFeatureSet) {
    let mut make = |name: &str| {
        let feats = (0..n)
            .map(|_| LocalFeature {
                x: rng.gen_range(0.0..1000.0),
                y: rng.gen_range(0.0..1000.0),
                scale: 1.0,
                descriptor: random_unit(rng, dim),
            })
            .collect();
        LocalFeatureSet::new(id(name), dim, feats).unwrap()
    };
    let a = make("ra");
    let b = make("rb");
    (a, b)
}

/// Random submission over `n` images plus matching truth. Confidences come
/// from a coarse grid so ties are common.
pub fn random_case(
    rng: &mut ChaCha8Rng,
    n: usize,
    landmark_rate: f64,
    empty_rate: f64,
    correct_rate: f64,
) -> (Submission, GroundTruth) {
    let mut rows = Vec::with_capacity(n);
    let mut truth = BTreeMap::new();
    for i in 0..n {
        let image = id(format!("img{:05}", (i * 7919) % 100_003));
        let label = rng
            .gen_bool(landmark_rate)
            .then(|| ClassLabel(rng.gen_range(0..20)));
        truth.insert(image.clone(), label);
        if rng.gen_bool(empty_rate) {
            rows.push(Prediction::empty(image));
        } else {
            let guess = match label {
                Some(l) if rng.gen_bool(correct_rate) => l,
                _ => ClassLabel(rng.gen_range(0..20)),
            };
            let conf = rng.gen_range(0..40) as f64 / 4.0;
            rows.push(Prediction::new(image, guess, conf));
        }
    }
    (Submission::new(rows).unwrap(), GroundTruth::new(truth))
}

/// Classes of mixed size; members are noisy copies of a few sub-centers so
/// components of several sizes appear around the 0.5 threshold.
pub fn clean_fixture(
    rng: &mut ChaCha8Rng,
    images: usize,
    dim: usize,
) -> (LabelTable, DescriptorStore) {
    let classes = rng.gen_range(5..40);
    let mut rows = Vec::new();
    let mut labels = LabelTable::new();
    let centers: Vec<Vec<Vec<f32>>> = (0..classes)
        .map(|_| {
            (0..rng.gen_range(1..4))
                .map(|_| random_unit(rng, dim))
                .collect()
        })
        .collect();
    for i in 0..images {
        let c = rng.gen_range(0..classes);
        let center = &centers[c][rng.gen_range(0..centers[c].len())];
        let noise = rng.gen_range(0.1..1.2);
        let v: Vec<f32> = center
            .iter()
            .map(|x| x + noise * rng.gen_range(-1.0f32..1.0) / (dim as f32).sqrt())
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        let image = id(format!("im{i:05}"));
        labels.insert(image.clone(), ClassLabel(c as u64));
        rows.push((image, v.iter().map(|x| x / n).collect::<Vec<f32>>()));
    }
    (labels, DescriptorStore::from_rows(dim, rows).unwrap())
}

pub const RERANK_FEATURES: usize = 30;
const RERANK_DIM: usize = 16;

/// Images in the same group share a translated point layout.
pub fn rerank_fixture(rng: &mut ChaCha8Rng, n: usize) -> (Submission, InMemoryFeatures) {
    let groups = rng.gen_range(1..6);
    let layouts: Vec<Vec<((f32, f32), Vec<f32>)>> = (0..groups)
        .map(|_| {
            (0..RERANK_FEATURES)
                .map(|_| {
                    (
                        (rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)),
                        random_unit(rng, RERANK_DIM),
                    )
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    let mut features = InMemoryFeatures::new();
    for i in 0..n {
        let image = id(format!("x{i:04}"));
        let group = rng.gen_bool(0.6).then(|| rng.gen_range(0..groups));
        let (dx, dy) = (rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0));
        let feats = (0..RERANK_FEATURES)
            .map(|k| match group {
                Some(g) => {
                    let ((x, y), d) = &layouts[g][k];
                    LocalFeature {
                        x: x + dx,
                        y: y + dy,
                        scale: 1.0,
                        descriptor: d.clone(),
                    }
                }
                None => LocalFeature {
                    x: rng.gen_range(0.0..1000.0),
                    y: rng.gen_range(0.0..1000.0),
                    scale: 1.0,
                    descriptor: random_unit(rng, RERANK_DIM),
                },
            })
            .collect();
        features.insert(LocalFeatureSet::new(image.clone(), RERANK_DIM, feats).unwrap());
        rows.push(if rng.gen_bool(0.1) {
            Prediction::empty(image)
        } else {
            Prediction::new(
                image,
                ClassLabel(rng.gen_range(0..5)),
                rng.gen_range(0..20) as f64 / 2.0,
            )
        });
    }
    (Submission::new(rows).unwrap(), features)
}
