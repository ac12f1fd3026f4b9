//! Principal components of a data matrix, and the linear two-component
//! projection used as the baseline against the nonlinear latent map.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PcaError {
    #[error("need more samples than dimensions, got {n} samples in {d} dimensions")]
    TooFewSamples { n: usize, d: usize },
    #[error("data has zero variance")]
    ZeroVariance,
    #[error("data contains non-finite values")]
    NonFinite,
}

/// Eigen-decomposition of the sample covariance, components sorted by
/// decreasing variance. Each component's largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalComponents {
    pub mean: DVector<f64>,
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors as columns, same order as `eigenvalues`.
    pub components: DMatrix<f64>,
}

pub fn column_means(data: &DMatrix<f64>) -> DVector<f64> {
    let n = data.nrows() as f64;
    DVector::from_iterator(
        data.ncols(),
        data.column_iter().map(|c| c.iter().sum::<f64>() / n),
    )
}

pub fn principal_components(data: &DMatrix<f64>) -> Result<PrincipalComponents, PcaError> {
    let (n, d) = data.shape();
    if n <= d {
        return Err(PcaError::TooFewSamples { n, d });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(PcaError::NonFinite);
    }
    let mean = column_means(data);
    let mut centered = data.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    if cov.diagonal().iter().all(|&v| v <= 0.0) {
        return Err(PcaError::ZeroVariance);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut components = DMatrix::zeros(d, d);
    let mut eigenvalues = Vec::with_capacity(d);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        let pivot = v.iter().enumerate().fold(
            0,
            |best, (i, x)| if x.abs() > v[best].abs() { i } else { best },
        );
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        components.set_column(dst, &v);
        eigenvalues.push(eig.eigenvalues[src].max(0.0));
    }
    Ok(PrincipalComponents {
        mean,
        eigenvalues,
        components,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProjection {
    /// `N x 2` scores on the first two components.
    pub projections: DMatrix<f64>,
    pub components: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub explained_variance_ratio: [f64; 2],
}

impl LinearProjection {
    /// Point in data space reconstructed from its two scores.
    pub fn reconstruct(&self, row: usize) -> DVector<f64> {
        &self.mean + &self.components * self.projections.row(row).transpose()
    }
}

/// Projects centered data onto its top two principal directions.
pub fn linear_baseline(data: &DMatrix<f64>) -> Result<LinearProjection, PcaError> {
    let pcs = principal_components(data)?;
    let total: f64 = pcs.eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(PcaError::ZeroVariance);
    }
    let keep = pcs.eigenvalues.len().min(2);
    let mut components = DMatrix::zeros(data.ncols(), 2);
    for c in 0..keep {
        components.set_column(c, &pcs.components.column(c));
    }
    let mut centered = data.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-pcs.mean[j]);
    }
    let projections = centered * &components;
    let ratio = |i: usize| pcs.eigenvalues.get(i).map_or(0.0, |v| v / total);
    Ok(LinearProjection {
        projections,
        components,
        mean: pcs.mean,
        explained_variance_ratio: [ratio(0), ratio(1)],
    })
}
