//! Linear SVM distractor filter trained by stochastic subgradient descent.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Submission;
use crate::seed;
use crate::store::DescriptorStore;

pub const DEFAULT_SVM_THRESHOLD: f64 = 0.55;
pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_POSITIVES: usize = 20_000;
pub const DEFAULT_NEGATIVES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Sigmoid of the decision value, in (0, 1).
    pub fn output(&self, x: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.decision(x)).exp())
    }
}

/// Pegasos on the hinge loss with L2 regularization.
///
/// The bias is learned as the weight of a constant 1 feature. Examples are
/// shuffled per epoch with a seeded RNG; the returned model is the average of
/// the iterates over the final epoch.
pub fn svm_train<P: AsRef<[f64]>, N: AsRef<[f64]>>(
    positives: &[P],
    negatives: &[N],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<LinearModel> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Invalid(
            "SVM needs positive and negative examples".into(),
        ));
    }
    if !(lambda > 0.0) || epochs == 0 {
        return Err(Error::Invalid(
            "SVM needs lambda > 0 and at least one epoch".into(),
        ));
    }
    let dim = positives[0].as_ref().len();
    let mut examples: Vec<(&[f64], f64)> = Vec::with_capacity(positives.len() + negatives.len());
    for p in positives {
        examples.push((p.as_ref(), 1.0));
    }
    for n in negatives {
        examples.push((n.as_ref(), -1.0));
    }
    if let Some((x, _)) = examples.iter().find(|(x, _)| x.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            found: x.len(),
        });
    }

    let mut rng = seed::rng(seed);
    let mut w = vec![0.0; dim + 1];
    let mut avg = vec![0.0; dim + 1];
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let last = epoch + 1 == epochs;
        for &i in &order {
            step += 1;
            let (x, y) = examples[i];
            let eta = 1.0 / (lambda * step as f64);
            let margin = y * (w[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[dim]);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += eta * y * xj;
                }
                w[dim] += eta * y;
            }
            if last {
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += v;
                }
            }
        }
    }
    let n = examples.len() as f64;
    let bias = avg[dim] / n;
    avg.truncate(dim);
    Ok(LinearModel {
        weights: avg.into_iter().map(|v| v / n).collect(),
        bias,
    })
}

/// `output - threshold` below the threshold, zero at or above it.
pub fn distractor_penalty(output: f64, threshold: f64) -> f64 {
    if output < threshold {
        output - threshold
    } else {
        0.0
    }
}

/// Lowers the confidence of predictions the classifier calls distractors:
/// `confidence += output - threshold` whenever `output < threshold`.
pub fn svm_reweight(
    sub: &Submission,
    model: &LinearModel,
    descriptors: &DescriptorStore,
    threshold: f64,
) -> Result<Submission> {
    if descriptors.dim() != model.weights.len() {
        return Err(Error::DimMismatch {
            expected: model.weights.len(),
            found: descriptors.dim(),
        });
    }
    let mut out = sub.clone();
    for row in &mut out.rows {
        let Some(guess) = row.guess.as_mut() else {
            continue;
        };
        let x: Vec<f64> = descriptors
            .require(&row.image)?
            .iter()
            .map(|&v| v as f64)
            .collect();
        guess.confidence += distractor_penalty(model.output(&x), threshold);
    }
    Ok(out)
}

pub type Examples = Vec<Vec<f64>>;

/// Training examples for the distractor filter: a seeded sample of up to
/// `positives` train descriptors and the descriptors of the `negatives`
/// lowest-ranked rows of `ranking`.
pub fn training_sets(
    train: &DescriptorStore,
    ranking: &Submission,
    test: &DescriptorStore,
    positives: usize,
    negatives: usize,
    seed: u64,
) -> Result<(Examples, Examples)> {
    let mut rows: Vec<usize> = (0..train.len()).collect();
    if positives < rows.len() {
        let mut rng = seed::rng(seed);
        rows.partial_shuffle(&mut rng, positives);
        rows.truncate(positives);
        rows.sort_unstable();
    }
    let pos = rows.into_iter().map(|i| train.row_f64(i)).collect();
    let neg = ranking
        .ranked()
        .iter()
        .rev()
        .take(negatives)
        .map(|r| {
            test.require(&r.image)
                .map(|v| v.iter().map(|&x| x as f64).collect())
        })
        .collect::<Result<_>>()?;
    Ok((pos, neg))
}
