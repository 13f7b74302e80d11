//! Submission-level re-ranking: inlier-driven anchor re-ranking of the top
//! of the list, confidence tie-breaking against a reference submission, and
//! alternating merge of two submissions.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::csvio::write_text;
use crate::error::{Error, Result};
use crate::features::FeatureSource;
use crate::model::{Guess, ImageId, Prediction, Submission};
use crate::verify::{inlier_score, RansacParams};

pub const DEFAULT_POOL_SIZE: usize = 20_000;
pub const DEFAULT_INLIER_THRESHOLD: usize = 24;
pub const DEFAULT_ROUNDS: usize = 2;
/// Anchors must stay below this bound.
pub const MAX_ANCHORS: usize = 1000;
pub const DEFAULT_MODIFY_DIVISOR: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankParams {
    /// Rows of the ranked submission that take part.
    pub pool_size: usize,
    /// Minimum inlier score for a lower-ranked image to be pulled up.
    pub inlier_threshold: usize,
    /// Anchors visited per round.
    pub anchors: usize,
    pub rounds: usize,
    pub ransac: RansacParams,
}

impl RerankParams {
    pub fn new(anchors: usize) -> Self {
        RerankParams {
            pool_size: DEFAULT_POOL_SIZE,
            inlier_threshold: DEFAULT_INLIER_THRESHOLD,
            anchors,
            rounds: DEFAULT_ROUNDS,
            ransac: RansacParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchors == 0 || self.anchors >= MAX_ANCHORS || self.pool_size < self.anchors {
            return Err(Error::Invalid(format!(
                "need 1 <= N < {MAX_ANCHORS} and K >= N (N = {}, K = {})",
                self.anchors, self.pool_size
            )));
        }
        if self.inlier_threshold == 0 || self.rounds == 0 {
            return Err(Error::Invalid(
                "inlier threshold and rounds must be at least 1".into(),
            ));
        }
        self.ransac.validate()
    }
}

/// One image pulled up beneath an anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEntry {
    pub round: usize,
    pub anchor: ImageId,
    pub absorbed: ImageId,
    pub inliers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reranked {
    pub submission: Submission,
    pub audit: Vec<AuditEntry>,
}

/// `n` strictly decreasing values from `hi` down to `lo`, linearly spaced.
///
/// When `above` is given every value stays strictly above it. Degenerate
/// ranges are widened to a minimum relative spacing of 1e-6 so the order
/// survives 9-significant-digit serialization.
pub fn spread_confidences(n: usize, hi: f64, lo: f64, above: Option<f64>) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let magnitude = hi
        .abs()
        .max(lo.abs())
        .max(above.map_or(0.0, f64::abs))
        .max(1.0);
    let unit = 1e-6 * magnitude;
    let mut lo = lo;
    if let Some(t) = above {
        if lo < t + unit {
            lo = t + unit;
        }
    }
    let span = unit * (n - 1) as f64;
    let hi = if hi - lo < span { lo + span } else { hi };
    if n == 1 {
        return vec![hi];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { lo } else { hi - step * i as f64 })
        .collect()
}

/// Inlier-driven re-ranking of the top of a submission.
///
/// The first `pool_size` non-empty rows in ranked order form the head; the
/// rest (the tail) keeps its order and confidences. In each round the head is
/// walked from the top: every image not yet pulled up in this round acts as an
/// anchor (at most `anchors` per round) and is matched against all lower,
/// not-yet-pulled images. Those scoring at least `inlier_threshold` move to
/// just below the anchor, by score descending then id. Labels never change.
/// Head confidences are finally re-spread from the original head maximum to
/// minimum, strictly above the tail.
pub fn rerank_inliers(
    sub: &Submission,
    features: &dyn FeatureSource,
    params: &RerankParams,
) -> Result<Reranked> {
    params.validate()?;
    let ranked = sub.ranked();
    let head_len = ranked
        .iter()
        .take(params.pool_size)
        .take_while(|r| r.guess.is_some())
        .count();
    let (head, tail) = ranked.split_at(head_len);

    let head_features = head
        .iter()
        .map(|r| features.features(&r.image))
        .collect::<Result<Vec<_>>>()?;
    let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
    let mut order: Vec<usize> = (0..head.len()).collect();
    let mut audit = Vec::new();

    for round in 1..=params.rounds {
        let mut absorbed = vec![false; head.len()];
        let mut anchors_used = 0;
        let mut pos = 0;
        while pos < order.len() && anchors_used < params.anchors {
            let anchor = order[pos];
            if absorbed[anchor] {
                pos += 1;
                continue;
            }
            anchors_used += 1;
            let targets: Vec<usize> = order[pos + 1..]
                .iter()
                .copied()
                .filter(|&t| !absorbed[t])
                .collect();
            let missing: Vec<usize> = targets
                .iter()
                .copied()
                .filter(|&t| !cache.contains_key(&(anchor, t)))
                .collect();
            let fresh = missing
                .par_iter()
                .map(|&t| {
                    inlier_score(&head_features[anchor], &head_features[t], &params.ransac)
                        .map(|s| (t, s))
                })
                .collect::<Result<Vec<_>>>()?;
            for (t, s) in fresh {
                cache.insert((anchor, t), s);
            }
            let mut pulled: Vec<(usize, usize)> = targets
                .iter()
                .map(|&t| (t, cache[&(anchor, t)]))
                .filter(|&(_, s)| s >= params.inlier_threshold)
                .collect();
            pulled.sort_by(|x, y| {
                y.1.cmp(&x.1)
                    .then_with(|| head[x.0].image.cmp(&head[y.0].image))
            });
            if !pulled.is_empty() {
                let moved: HashSet<usize> = pulled.iter().map(|p| p.0).collect();
                let mut rest: Vec<usize> = order[pos + 1..]
                    .iter()
                    .copied()
                    .filter(|t| !moved.contains(t))
                    .collect();
                order.truncate(pos + 1);
                for &(t, s) in &pulled {
                    absorbed[t] = true;
                    order.push(t);
                    audit.push(AuditEntry {
                        round,
                        anchor: head[anchor].image.clone(),
                        absorbed: head[t].image.clone(),
                        inliers: s,
                    });
                }
                order.append(&mut rest);
            }
            pos += 1;
        }
    }

    let confidences: Vec<f64> = head.iter().filter_map(Prediction::confidence).collect();
    let hi = confidences
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let lo = confidences.iter().copied().fold(f64::INFINITY, f64::min);
    let tail_max = tail
        .iter()
        .filter_map(Prediction::confidence)
        .fold(None, |acc: Option<f64>, c| {
            Some(acc.map_or(c, |a| a.max(c)))
        });
    let spread = spread_confidences(head.len(), hi, lo, tail_max);

    let mut rows = Vec::with_capacity(ranked.len());
    for (&i, conf) in order.iter().zip(spread) {
        let label = head[i].label().unwrap();
        rows.push(Prediction::new(head[i].image.clone(), label, conf));
    }
    rows.extend(tail.iter().cloned());
    Ok(Reranked {
        submission: Submission::new(rows)?,
        audit,
    })
}

pub fn save_audit(audit: &[AuditEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("round,anchor,absorbed,inliers\n");
    for e in audit {
        let _ = writeln!(out, "{},{},{},{}", e.round, e.anchor, e.absorbed, e.inliers);
    }
    write_text(path.as_ref(), &out)
}

/// Adds `reference / divisor` to every non-empty confidence in `main` whose
/// reference prediction is also non-empty. Labels come from `main`.
pub fn modify_confidences(
    main: &Submission,
    reference: &Submission,
    divisor: f64,
) -> Result<Submission> {
    main.check_same_ids(reference)?;
    if !(divisor != 0.0 && divisor.is_finite()) {
        return Err(Error::Invalid("divisor must be finite and non-zero".into()));
    }
    let refs = reference.by_id();
    let rows = main
        .rows
        .iter()
        .map(|row| {
            let mut row = row.clone();
            if let (Some(g), Some(c)) = (row.guess.as_mut(), refs[&row.image].confidence()) {
                g.confidence += c / divisor;
            }
            row
        })
        .collect();
    Submission::new(rows)
}

/// Interleaves the ranked heads of `a` and `b` (`a` first), keeping the first
/// occurrence of each image, then appends everything else in `a`'s ranked
/// order. Non-empty confidences are re-spread over `a`'s original range.
pub fn merge_alternating(a: &Submission, b: &Submission, head_size: usize) -> Result<Submission> {
    a.check_same_ids(b)?;
    let a_ranked = a.ranked();
    let b_ranked = b.ranked();
    let a_head: Vec<&Prediction> = a_ranked
        .iter()
        .filter(|r| r.guess.is_some())
        .take(head_size)
        .collect();
    let b_head: Vec<&Prediction> = b_ranked
        .iter()
        .filter(|r| r.guess.is_some())
        .take(head_size)
        .collect();

    let mut seen: HashSet<&ImageId> = HashSet::with_capacity(a.len());
    let mut merged: Vec<&Prediction> = Vec::with_capacity(a.len());
    for i in 0..head_size.min(a_head.len().max(b_head.len())) {
        for head in [&a_head, &b_head] {
            if let Some(row) = head.get(i) {
                if seen.insert(&row.image) {
                    merged.push(row);
                }
            }
        }
    }
    for row in &a_ranked {
        if seen.insert(&row.image) {
            merged.push(row);
        }
    }

    let range_of = |s: &Submission| {
        let cs: Vec<f64> = s.rows.iter().filter_map(Prediction::confidence).collect();
        (!cs.is_empty()).then(|| {
            (
                cs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                cs.iter().copied().fold(f64::INFINITY, f64::min),
            )
        })
    };
    let (hi, lo) = range_of(a).or_else(|| range_of(b)).unwrap_or((1.0, 0.0));
    let non_empty = merged.iter().filter(|r| r.guess.is_some()).count();
    let mut spread = spread_confidences(non_empty, hi, lo, None).into_iter();
    let rows = merged
        .into_iter()
        .map(|r| Prediction {
            image: r.image.clone(),
            guess: r.guess.map(|g| Guess {
                label: g.label,
                confidence: spread.next().unwrap(),
            }),
        })
        .collect();
    Submission::new(rows)
}
