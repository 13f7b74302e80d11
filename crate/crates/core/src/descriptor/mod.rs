//! Global descriptor math: pooling, concatenation, multi-scale aggregation,
//! attenuated whitening and the metric-learning losses.

mod loss;
mod pooling;
mod whitening;

pub use loss::{
    contrastive_loss, expand_tuple, triplet_loss, TrainingTuple, TupleLosses, CONTRASTIVE_MARGIN,
    TRIPLET_MARGIN,
};
pub use pooling::{
    gem_pool, mac_pool, rmac_pool, rmac_regions, spoc_pool, FeatureMap, Region, DEFAULT_GEM_P,
    DEFAULT_RMAC_LEVELS,
};
pub use whitening::{fit_auw, WhiteningModel, DEFAULT_AUW_T, EIGEN_FLOOR};

use crate::error::{Error, Result};

/// Test-time scale factors for multi-scale extraction.
pub const MULTISCALE_FACTORS: [f64; 3] = [
    std::f64::consts::FRAC_1_SQRT_2,
    1.0,
    std::f64::consts::SQRT_2,
];

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite descriptor entry".into()));
    }
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::Domain("cannot normalize a zero vector".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Concatenates the parts and L2-normalizes the result.
pub fn concat_descriptors<V: AsRef<[f64]>>(parts: &[V]) -> Result<Vec<f64>> {
    if parts.is_empty() {
        return Err(Error::Invalid("nothing to concatenate".into()));
    }
    let joined: Vec<f64> = parts
        .iter()
        .flat_map(|p| p.as_ref().iter().copied())
        .collect();
    l2_normalize(&joined)
}

/// Sum of per-scale descriptors, L2-normalized.
pub fn multiscale_aggregate<V: AsRef<[f64]>>(descs: &[V]) -> Result<Vec<f64>> {
    let Some(first) = descs.first() else {
        return Err(Error::Invalid("no descriptors to aggregate".into()));
    };
    let dim = first.as_ref().len();
    let mut sum = vec![0.0; dim];
    for d in descs {
        let d = d.as_ref();
        if d.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: d.len(),
            });
        }
        for (s, x) in sum.iter_mut().zip(d) {
            *s += x;
        }
    }
    l2_normalize(&sum)
}
