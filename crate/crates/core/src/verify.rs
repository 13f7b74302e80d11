//! Local feature matching, affine RANSAC verification, and inlier-based
//! rescoring of global search candidates.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::csvio::write_text;
use crate::error::{Error, Result};
use crate::features::{FeatureSource, LocalFeatureSet};
use crate::model::{ImageId, LabelTable, Prediction, Submission};
use crate::search::{argmax_class, NeighborList};
use crate::seed;

pub const DEFAULT_RANSAC_ITERATIONS: usize = 1000;
pub const DEFAULT_RESIDUAL_PX: f64 = 5.0;
/// Affine model minimal sample.
pub const MIN_SAMPLE: usize = 3;
pub const DEFAULT_MAX_FEATURES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub a_index: usize,
    pub b_index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub residual_px: f64,
    /// Features kept per image, largest scale first.
    pub max_features: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            iterations: DEFAULT_RANSAC_ITERATIONS,
            residual_px: DEFAULT_RESIDUAL_PX,
            max_features: DEFAULT_MAX_FEATURES,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.residual_px > 0.0) || self.max_features == 0 {
            return Err(Error::Invalid(
                "RANSAC needs iterations >= 1, residual_px > 0 and max_features >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Mutual nearest neighbors in descriptor space (lowest index wins ties).
pub fn match_features(a: &LocalFeatureSet, b: &LocalFeatureSet) -> Result<Vec<Correspondence>> {
    if a.desc_dim != b.desc_dim {
        return Err(Error::DimMismatch {
            expected: a.desc_dim,
            found: b.desc_dim,
        });
    }
    let (na, nb) = (a.len(), b.len());
    let mut dist = vec![0f32; na * nb];
    for (i, fa) in a.features.iter().enumerate() {
        for (j, fb) in b.features.iter().enumerate() {
            dist[i * nb + j] = squared_distance(&fa.descriptor, &fb.descriptor);
        }
    }
    let argmin = |values: &mut dyn Iterator<Item = f32>| {
        let mut best: Option<(usize, f32)> = None;
        for (k, d) in values.enumerate() {
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        best
    };
    let backward: Vec<Option<usize>> = (0..nb)
        .map(|j| argmin(&mut (0..na).map(|i| dist[i * nb + j])).map(|(i, _)| i))
        .collect();
    let mut out = Vec::new();
    for i in 0..na {
        if let Some((j, d2)) = argmin(&mut dist[i * nb..(i + 1) * nb].iter().copied()) {
            if backward[j] == Some(i) {
                out.push(Correspondence {
                    a_index: i,
                    b_index: j,
                    distance: (d2 as f64).sqrt(),
                });
            }
        }
    }
    Ok(out)
}

/// `[a b tx; c d ty]` mapping image-a coordinates to image-b coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [[f64; 3]; 2],
}

impl Affine {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    /// Exact fit through three point pairs; `None` for (near-)collinear sources.
    pub fn from_three(src: [(f64, f64); 3], dst: [(f64, f64); 3]) -> Option<Affine> {
        let (x0, y0) = src[0];
        let (ux, uy) = (src[1].0 - x0, src[1].1 - y0);
        let (vx, vy) = (src[2].0 - x0, src[2].1 - y0);
        let det = ux * vy - uy * vx;
        let scale = (ux * ux + uy * uy).max(vx * vx + vy * vy);
        if det.abs() <= 1e-9 * scale.max(1.0) {
            return None;
        }
        let mut m = [[0.0; 3]; 2];
        for (row, coord) in m.iter_mut().zip([0usize, 1]) {
            let pick = |p: (f64, f64)| if coord == 0 { p.0 } else { p.1 };
            let (p0, p1, p2) = (pick(dst[0]), pick(dst[1]), pick(dst[2]));
            let (du, dv) = (p1 - p0, p2 - p0);
            // Solve [ux uy; vx vy] [a; b] = [du; dv].
            let a = (du * vy - uy * dv) / det;
            let b = (ux * dv - du * vx) / det;
            *row = [a, b, p0 - a * x0 - b * y0];
        }
        Some(Affine { m })
    }
}

fn point(set: &LocalFeatureSet, i: usize) -> (f64, f64) {
    let f = &set.features[i];
    (f.x as f64, f.y as f64)
}

/// Three distinct indices below `n` (`n >= 3`), uniformly without replacement.
fn distinct_triple(rng: &mut impl Rng, n: usize) -> (usize, usize, usize) {
    let i = rng.gen_range(0..n);
    let mut j = rng.gen_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    let mut k = rng.gen_range(0..n - 2);
    if k >= lo {
        k += 1;
    }
    if k >= hi {
        k += 1;
    }
    (i, j, k)
}

/// Best inlier count of an affine model over a fixed number of seeded
/// minimal samples. Degenerate samples are skipped.
pub fn ransac_verify(
    corr: &[Correspondence],
    a: &LocalFeatureSet,
    b: &LocalFeatureSet,
    params: &RansacParams,
) -> Result<usize> {
    params.validate()?;
    if corr.len() < MIN_SAMPLE {
        return Ok(0);
    }
    for c in corr {
        if c.a_index >= a.len() || c.b_index >= b.len() {
            return Err(Error::Invalid("correspondence index out of range".into()));
        }
    }
    let src: Vec<(f64, f64)> = corr.iter().map(|c| point(a, c.a_index)).collect();
    let dst: Vec<(f64, f64)> = corr.iter().map(|c| point(b, c.b_index)).collect();
    let limit = params.residual_px * params.residual_px;
    let mut rng = seed::rng(params.seed);
    let mut best = 0;
    for _ in 0..params.iterations {
        let (i, j, k) = distinct_triple(&mut rng, corr.len());
        let Some(model) = Affine::from_three([src[i], src[j], src[k]], [dst[i], dst[j], dst[k]])
        else {
            continue;
        };
        let inliers = src
            .iter()
            .zip(&dst)
            .filter(|(s, d)| {
                let (px, py) = model.apply(s.0, s.1);
                let (ex, ey) = (px - d.0, py - d.1);
                ex * ex + ey * ey <= limit
            })
            .count();
        if inliers > best {
            best = inliers;
            if best == corr.len() {
                break;
            }
        }
    }
    Ok(best)
}

/// Seed for verifying `query` against `candidate`; independent of evaluation order.
pub fn pair_seed(seed: u64, query: &ImageId, candidate: &ImageId) -> u64 {
    seed::derive(seed, &["ransac", query.as_str(), candidate.as_str()])
}

fn capped(set: &LocalFeatureSet, cap: usize) -> Cow<'_, LocalFeatureSet> {
    if set.len() > cap {
        Cow::Owned(set.capped(cap))
    } else {
        Cow::Borrowed(set)
    }
}

/// Mutual-NN matching followed by RANSAC; `a` is the query side.
pub fn inlier_score(
    a: &LocalFeatureSet,
    b: &LocalFeatureSet,
    params: &RansacParams,
) -> Result<usize> {
    params.validate()?;
    let (a, b) = (
        capped(a, params.max_features),
        capped(b, params.max_features),
    );
    let corr = match_features(&a, &b)?;
    let pair = RansacParams {
        seed: pair_seed(params.seed, &a.image, &b.image),
        ..*params
    };
    ransac_verify(&corr, &a, &b, &pair)
}

/// Which neighbors vote after local verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidateOrder {
    /// Rank candidates by inlier score, then global similarity.
    #[default]
    InlierScore,
    /// Keep the global similarity order.
    GlobalSimilarity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairScore {
    pub test: ImageId,
    pub candidate: ImageId,
    pub inliers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rescored {
    pub submission: Submission,
    pub pair_scores: Vec<PairScore>,
}

/// Re-scores each query's global candidates by inlier count and votes by
/// class over the top `k_agg`; the winning inlier sum is the confidence.
pub fn rescore_candidates(
    neighbors: &[NeighborList],
    labels: &LabelTable,
    features: &dyn FeatureSource,
    k_agg: usize,
    order: CandidateOrder,
    params: &RansacParams,
) -> Result<Rescored> {
    params.validate()?;
    if k_agg == 0 {
        return Err(Error::Invalid("k_agg must be at least 1".into()));
    }
    let per_query = neighbors
        .par_iter()
        .map(|list| {
            let query = features.features(&list.query)?;
            let mut scored = Vec::with_capacity(list.neighbors.len());
            for n in &list.neighbors {
                let cand = features.features(&n.train)?;
                let inliers = inlier_score(&query, &cand, params)?;
                let label = *labels
                    .get(&n.train)
                    .ok_or_else(|| Error::MissingId(n.train.clone()))?;
                scored.push((n, inliers, label));
            }
            let scores: Vec<PairScore> = scored
                .iter()
                .map(|(n, inliers, _)| PairScore {
                    test: list.query.clone(),
                    candidate: n.train.clone(),
                    inliers: *inliers,
                })
                .collect();
            if order == CandidateOrder::InlierScore {
                scored.sort_by(|x, y| {
                    y.1.cmp(&x.1)
                        .then_with(|| y.0.similarity.total_cmp(&x.0.similarity))
                        .then_with(|| x.0.train.cmp(&y.0.train))
                });
            }
            let mut class_scores = BTreeMap::new();
            for (_, inliers, label) in scored.iter().take(k_agg) {
                *class_scores.entry(*label).or_insert(0.0) += *inliers as f64;
            }
            let (label, confidence) = argmax_class(&class_scores)
                .ok_or_else(|| Error::Invalid(format!("no candidates for query {}", list.query)))?;
            Ok((
                Prediction::new(list.query.clone(), label, confidence),
                scores,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(per_query.len());
    let mut pair_scores = Vec::new();
    for (row, scores) in per_query {
        rows.push(row);
        pair_scores.extend(scores);
    }
    Ok(Rescored {
        submission: Submission::new(rows)?,
        pair_scores,
    })
}

pub fn save_pair_scores(scores: &[PairScore], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("test,candidate,inliers\n");
    for s in scores {
        let _ = writeln!(out, "{},{},{}", s.test, s.candidate, s.inliers);
    }
    write_text(path.as_ref(), &out)
}
