pub const CONTRASTIVE_MARGIN: f64 = 0.9;
pub const TRIPLET_MARGIN: f64 = 0.2;
pub const TUPLE_NEGATIVES: usize = 5;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Positive pairs: `0.5 * |a - b|^2`. Negative pairs: `0.5 * max(0, margin - |a - b|)^2`.
pub fn contrastive_loss(a: &[f64], b: &[f64], is_positive: bool, margin: f64) -> f64 {
    let d2 = squared_distance(a, b);
    if is_positive {
        0.5 * d2
    } else {
        let gap = (margin - d2.sqrt()).max(0.0);
        0.5 * gap * gap
    }
}

/// `max(0, margin + |q - p|^2 - |q - n|^2)`.
pub fn triplet_loss(q: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    (margin + squared_distance(q, p) - squared_distance(q, n)).max(0.0)
}

/// Query, one positive and five hard negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTuple {
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: [Vec<f64>; TUPLE_NEGATIVES],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TupleLosses {
    /// `(q, p)` then `(q, n_i)` for i = 1..5.
    pub pairs: [f64; TUPLE_NEGATIVES + 1],
    /// `(q, p, n_i)` for i = 1..5.
    pub triplets: [f64; TUPLE_NEGATIVES],
    pub total: f64,
}

/// Expands a tuple into its 6 contrastive pairs and 5 triplets.
pub fn expand_tuple(
    tuple: &TrainingTuple,
    contrastive_margin: f64,
    triplet_margin: f64,
) -> TupleLosses {
    let mut pairs = [0.0; TUPLE_NEGATIVES + 1];
    pairs[0] = contrastive_loss(&tuple.query, &tuple.positive, true, contrastive_margin);
    for (slot, neg) in pairs[1..].iter_mut().zip(&tuple.negatives) {
        *slot = contrastive_loss(&tuple.query, neg, false, contrastive_margin);
    }
    let mut triplets = [0.0; TUPLE_NEGATIVES];
    for (slot, neg) in triplets.iter_mut().zip(&tuple.negatives) {
        *slot = triplet_loss(&tuple.query, &tuple.positive, neg, triplet_margin);
    }
    let total = pairs.iter().chain(&triplets).sum();
    TupleLosses {
        pairs,
        triplets,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contrastive_cases() {
        let a = [1.0, 0.0];
        assert_eq!(contrastive_loss(&a, &a, true, CONTRASTIVE_MARGIN), 0.0);
        assert_eq!(
            contrastive_loss(&a, &[-1.0, 0.0], false, CONTRASTIVE_MARGIN),
            0.0
        );
        let b = [0.6, 0.0];
        let loss = contrastive_loss(&a, &b, false, CONTRASTIVE_MARGIN);
        assert!((loss - 0.125).abs() < 1e-9);
    }

    #[test]
    fn triplet_cases() {
        let q = [1.0, 0.0];
        let n = [0.0, 1.0];
        assert_eq!(triplet_loss(&q, &q, &n, TRIPLET_MARGIN), 0.0);
        assert!((triplet_loss(&q, &n, &n, TRIPLET_MARGIN) - TRIPLET_MARGIN).abs() < 1e-15);
        // |q-p|^2 = 0.1, |q-n|^2 = 0.2
        let p = [1.0, 0.1f64.sqrt()];
        let n = [1.0, 0.2f64.sqrt()];
        assert!((triplet_loss(&q, &p, &n, 0.2) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn tuple_arities_and_total() {
        let q = vec![1.0, 0.0, 0.0];
        let tuple = TrainingTuple {
            query: q.clone(),
            positive: q.clone(),
            negatives: std::array::from_fn(|i| {
                if i % 2 == 0 {
                    vec![-1.0, 0.0, 0.0]
                } else {
                    vec![0.0, 1.0, 0.0]
                }
            }),
        };
        let out = expand_tuple(&tuple, CONTRASTIVE_MARGIN, TRIPLET_MARGIN);
        assert_eq!(out.pairs.len(), 6);
        assert_eq!(out.triplets.len(), 5);
        assert_eq!(out.total, 0.0);
    }
}
