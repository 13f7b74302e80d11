use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

use super::l2_normalize;

/// Attenuation exponent used for dimensionality reduction.
pub const DEFAULT_AUW_T: f64 = 0.5;

/// Eigenvalues below `EIGEN_FLOOR * largest` count as rank deficiency.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Attenuated unsupervised whitening: PCA rotation followed by per-axis
/// scaling `lambda^(-t/2)`. `t = 1` is full PCA whitening, `t = 0` a rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    mean: DVector<f64>,
    /// d x m, orthonormal columns.
    basis: DMatrix<f64>,
    /// Descending, strictly positive.
    eigenvalues: Vec<f64>,
    t: f64,
}

impl WhiteningModel {
    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Column `i` of the basis.
    pub fn axis(&self, i: usize) -> Vec<f64> {
        self.basis.column(i).iter().copied().collect()
    }

    /// Centered, rotated and attenuated vector before the final normalization.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                found: v.len(),
            });
        }
        let centered = DVector::from_column_slice(v) - &self.mean;
        let rotated = self.basis.tr_mul(&centered);
        Ok(rotated
            .iter()
            .zip(&self.eigenvalues)
            .map(|(x, lambda)| x * lambda.powf(-self.t / 2.0))
            .collect())
    }

    /// `l2_normalize(diag(lambda^(-t/2)) * basis^T * (v - mean))`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let projected = self.project(v)?;
        l2_normalize(&projected)
            .map_err(|_| Error::Domain("vector projects to zero under whitening".into()))
    }
}

/// Fits a whitening model on the rows of `data` (n x d), keeping `out_dim` axes.
///
/// Uses the unbiased sample covariance. Eigenvector signs are fixed so the
/// largest-magnitude component of every axis is positive.
pub fn fit_auw<V: AsRef<[f64]>>(data: &[V], t: f64, out_dim: usize) -> Result<WhiteningModel> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Invalid(format!(
            "attenuation t must lie in [0, 1], got {t}"
        )));
    }
    let n = data.len();
    if out_dim == 0 || n <= out_dim {
        return Err(Error::Invalid(format!(
            "need n > m >= 1 samples, got n = {n}, m = {out_dim}"
        )));
    }
    let d = data[0].as_ref().len();
    if out_dim > d {
        return Err(Error::Invalid(format!(
            "output dim {out_dim} exceeds input dim {d}"
        )));
    }
    let mut x = DMatrix::<f64>::zeros(n, d);
    for (i, row) in data.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite training vector".into()));
        }
        x.row_mut(i).copy_from_slice(row);
    }
    let mean = x.row_mean().transpose();
    for mut row in x.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let largest = eig.eigenvalues[order[0]];
    let effective = if largest > 0.0 {
        order
            .iter()
            .filter(|&&i| eig.eigenvalues[i] >= EIGEN_FLOOR * largest)
            .count()
    } else {
        0
    };
    if effective < out_dim {
        return Err(Error::RankDeficient {
            effective,
            requested: out_dim,
        });
    }

    let mut basis = DMatrix::<f64>::zeros(d, out_dim);
    let mut eigenvalues = Vec::with_capacity(out_dim);
    for (col, &i) in order.iter().take(out_dim).enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.neg_mut();
        }
        basis.set_column(col, &v);
        eigenvalues.push(eig.eigenvalues[i]);
    }
    Ok(WhiteningModel {
        mean,
        basis,
        eigenvalues,
        t,
    })
}
