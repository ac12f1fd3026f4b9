//! Gaussian radial-basis interpolation of attribute values over normalized
//! survey coordinates, used to fill rows the texture pass could not compute.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{AttributeTable, TextureVector, ATTRIBUTE_NAMES};
use crate::volume::VolumeHeader;

#[derive(Debug, Error)]
pub enum RbfError {
    #[error("no training points")]
    Empty,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("kernel width must be finite and > 0, got {0}")]
    InvalidWidth(f64),
    #[error("regularization must be finite and >= 0, got {0}")]
    InvalidRegularization(f64),
    #[error("kernel system is singular{0}")]
    Singular(String),
    #[error("attribute `{0}` has no observed rows")]
    AllMissing(&'static str),
    #[error("invalid interpolation settings: {0}")]
    Settings(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fitted Gaussian interpolant `f(s) = sum_a w_a exp(-|s - s_a|^2 / (2 width^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfModel {
    /// One center per row.
    centers: Vec<Vec<f64>>,
    weights: Vec<f64>,
    kernel_width: f64,
    regularization: f64,
    target_name: String,
}

impl RbfModel {
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn with_target_name(mut self, name: impl Into<String>) -> Self {
        self.target_name = name.into();
        self
    }

    pub fn predict(&self, query: &[f64]) -> Result<f64, RbfError> {
        let dim = self.centers[0].len();
        if query.len() != dim {
            return Err(RbfError::DimensionMismatch(format!(
                "query has {} coordinates, centers have {dim}",
                query.len()
            )));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(RbfError::NonFinite("query"));
        }
        Ok(self.eval(query))
    }

    fn eval(&self, query: &[f64]) -> f64 {
        let scale = -0.5 / (self.kernel_width * self.kernel_width);
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * (scale * sq_dist(c, query)).exp())
            .sum()
    }

    /// Predictions for many queries; each is independent so order and thread
    /// count do not affect the values.
    pub fn predict_many(&self, queries: &[Vec<f64>]) -> Result<Vec<f64>, RbfError> {
        queries.par_iter().map(|q| self.predict(q)).collect()
    }
}

/// Solves `(K + regularization I) w = targets` over the given centers.
pub fn fit(
    inputs: &[Vec<f64>],
    targets: &[f64],
    kernel_width: f64,
    regularization: f64,
) -> Result<RbfModel, RbfError> {
    if inputs.is_empty() {
        return Err(RbfError::Empty);
    }
    if inputs.len() != targets.len() {
        return Err(RbfError::DimensionMismatch(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let dim = inputs[0].len();
    if dim == 0 || inputs.iter().any(|p| p.len() != dim) {
        return Err(RbfError::DimensionMismatch(
            "inputs have inconsistent dimension".into(),
        ));
    }
    if inputs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(RbfError::NonFinite("inputs"));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(RbfError::NonFinite("targets"));
    }
    if !(kernel_width.is_finite() && kernel_width > 0.0) {
        return Err(RbfError::InvalidWidth(kernel_width));
    }
    if !(regularization.is_finite() && regularization >= 0.0) {
        return Err(RbfError::InvalidRegularization(regularization));
    }
    if regularization == 0.0 {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.sort_by(|&a, &b| inputs[a].partial_cmp(&inputs[b]).expect("finite"));
        if let Some(w) = order.windows(2).find(|w| inputs[w[0]] == inputs[w[1]]) {
            return Err(RbfError::Singular(format!(
                ": centers {} and {} coincide with no regularization",
                w[0], w[1]
            )));
        }
    }

    let n = inputs.len();
    let scale = -0.5 / (kernel_width * kernel_width);
    let mut k = DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        k[(a, a)] = 1.0 + regularization;
        for b in 0..a {
            let v = (scale * sq_dist(&inputs[a], &inputs[b])).exp();
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    let y = DVector::from_column_slice(targets);
    let w = match k.clone().cholesky() {
        Some(chol) => chol.solve(&y),
        None => k
            .lu()
            .solve(&y)
            .ok_or_else(|| RbfError::Singular(String::new()))?,
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(RbfError::Singular(" (non-finite weights)".into()));
    }
    Ok(RbfModel {
        centers: inputs.to_vec(),
        weights: w.iter().copied().collect(),
        kernel_width,
        regularization,
        target_name: String::new(),
    })
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64, RbfError> {
    if predicted.len() != actual.len() {
        return Err(RbfError::DimensionMismatch(format!(
            "{} predictions vs {} actual values",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(RbfError::Empty);
    }
    let mse = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / predicted.len() as f64;
    Ok(mse.sqrt())
}

/// Median of all pairwise distances, 1.0 when fewer than two distinct points.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for a in 0..points.len() {
        for b in 0..a {
            d.push(sq_dist(&points[a], &points[b]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = d.len() / 2;
    let median = if d.len() % 2 == 1 {
        d[m]
    } else {
        0.5 * (d[m - 1] + d[m])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbfSettings {
    /// `None` picks the median pairwise distance of up to 1000 training centers.
    pub kernel_width: Option<f64>,
    pub regularization: f64,
    /// Fraction of observed rows used for training.
    pub split: f64,
    pub seed: u64,
    pub max_centers: usize,
}

impl Default for RbfSettings {
    fn default() -> Self {
        Self {
            kernel_width: None,
            regularization: 1e-6,
            split: 0.8,
            seed: 7,
            max_centers: 2000,
        }
    }
}

impl RbfSettings {
    pub fn validate(&self) -> Result<(), RbfError> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(RbfError::Settings(format!(
                "split must lie in (0, 1), got {}",
                self.split
            )));
        }
        if self.max_centers == 0 {
            return Err(RbfError::Settings("max_centers must be at least 1".into()));
        }
        if let Some(w) = self.kernel_width {
            if !(w.is_finite() && w > 0.0) {
                return Err(RbfError::InvalidWidth(w));
            }
        }
        if !(self.regularization.is_finite() && self.regularization >= 0.0) {
            return Err(RbfError::InvalidRegularization(self.regularization));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeFit {
    pub attribute: String,
    pub training_rmse: f64,
    /// `None` when the split left no held-out rows.
    pub testing_rmse: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub kernel_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub attributes: Vec<AttributeFit>,
}

impl InterpolationReport {
    pub fn write_csv(&self, path: &Path) -> Result<(), RbfError> {
        let io_err = |source| RbfError::Io {
            path: path.into(),
            source,
        };
        let mut f = io::BufWriter::new(File::create(path).map_err(io_err)?);
        let mut text = String::from(
            "# rbf inputs: normalized (inline, crossline, z) coordinates; gaussian kernel\n",
        );
        text.push_str("attribute,training_error,testing_error,n_train,n_test\n");
        for a in &self.attributes {
            let test = a.testing_rmse.map(|v| v.to_string()).unwrap_or_default();
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                a.attribute, a.training_rmse, test, a.n_train, a.n_test
            ));
        }
        f.write_all(text.as_bytes()).map_err(io_err)?;
        f.flush().map_err(io_err)
    }
}

/// Voxel coordinates scaled to `[0, 1]` per axis; single-sample axes map to 0.
pub fn normalized_coordinates(g: &VolumeHeader, idx: usize) -> Vec<f64> {
    let (i, j, k) = g.unflatten(idx);
    let (ni, nx, nz) = g.dims();
    let scale = |v: usize, n: usize| {
        if n > 1 {
            v as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    vec![scale(i, ni), scale(j, nx), scale(k, nz)]
}

/// Fits one interpolant per attribute on a seeded train split of the observed
/// rows, reports train/test RMSE, and predicts every missing row. Observed
/// rows are copied through untouched.
pub fn fill_missing(
    table: &AttributeTable,
    settings: &RbfSettings,
) -> Result<(AttributeTable, InterpolationReport), RbfError> {
    settings.validate()?;
    let g = *table.geometry();
    let observed: Vec<(usize, [f64; 4])> = table.observed().collect();
    if observed.is_empty() {
        return Err(RbfError::AllMissing(ATTRIBUTE_NAMES[0]));
    }

    let mut order: Vec<usize> = (0..observed.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(settings.seed));
    let n_train =
        ((settings.split * observed.len() as f64).floor() as usize).clamp(1, observed.len());
    let (train, test) = order.split_at(n_train);
    let centers: Vec<usize> = train.iter().take(settings.max_centers).copied().collect();

    let center_coords: Vec<Vec<f64>> = centers
        .iter()
        .map(|&o| normalized_coordinates(&g, observed[o].0))
        .collect();
    let test_coords: Vec<Vec<f64>> = test
        .iter()
        .map(|&o| normalized_coordinates(&g, observed[o].0))
        .collect();
    let missing: Vec<usize> = (0..g.voxel_count())
        .filter(|&i| table.rows()[i].is_none())
        .collect();
    let missing_coords: Vec<Vec<f64>> = missing
        .iter()
        .map(|&i| normalized_coordinates(&g, i))
        .collect();

    let width = settings.kernel_width.unwrap_or_else(|| {
        let sample = &center_coords[..center_coords.len().min(1000)];
        median_pairwise_distance(sample)
    });

    let fits: Vec<(AttributeFit, Vec<f64>)> = (0..4)
        .into_par_iter()
        .map(|a| {
            let name = ATTRIBUTE_NAMES[a];
            let targets: Vec<f64> = centers.iter().map(|&o| observed[o].1[a]).collect();
            let model = fit(&center_coords, &targets, width, settings.regularization)?
                .with_target_name(name);
            let train_pred = model.predict_many(&center_coords)?;
            let training_rmse = rmse(&train_pred, &targets)?;
            let testing_rmse = if test.is_empty() {
                None
            } else {
                let actual: Vec<f64> = test.iter().map(|&o| observed[o].1[a]).collect();
                Some(rmse(&model.predict_many(&test_coords)?, &actual)?)
            };
            let filled = model.predict_many(&missing_coords)?;
            let report = AttributeFit {
                attribute: name.to_string(),
                training_rmse,
                testing_rmse,
                n_train: centers.len(),
                n_test: test.len(),
                kernel_width: width,
            };
            Ok((report, filled))
        })
        .collect::<Result<_, RbfError>>()?;

    let mut rows = table.rows().to_vec();
    for (m, &idx) in missing.iter().enumerate() {
        rows[idx] = Some(TextureVector::from_array([
            fits[0].1[m],
            fits[1].1[m],
            fits[2].1[m],
            fits[3].1[m],
        ]));
    }
    let report = InterpolationReport {
        attributes: fits.into_iter().map(|(r, _)| r).collect(),
    };
    Ok((AttributeTable::new(g, rows), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn single_point_interpolates() {
        for width in [0.01, 1.0, 50.0] {
            let m = fit(&[vec![0.3, 0.2]], &[5.0], width, 0.0).unwrap();
            assert!((m.predict(&[0.3, 0.2]).unwrap() - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn four_points_solve_exactly() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.7, 0.8],
        ];
        let y = [1.0, -2.0, 0.5, 3.0];
        let m = fit(&pts, &y, 0.6, 0.0).unwrap();
        // independent oracle: Gaussian elimination with partial pivoting
        let n = 4;
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            for j in 0..n {
                let d2: f64 = pts[i]
                    .iter()
                    .zip(&pts[j])
                    .map(|(p, q)| (p - q).powi(2))
                    .sum();
                a[i][j] = (-d2 / (2.0 * 0.36)).exp();
            }
            a[i][n] = y[i];
        }
        for c in 0..n {
            let p = (c..n)
                .max_by(|&r, &s| a[r][c].abs().partial_cmp(&a[s][c].abs()).unwrap())
                .unwrap();
            a.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=n {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        for i in 0..n {
            let w = a[i][n] / a[i][i];
            assert!((m.weights()[i] - w).abs() < 1e-9 * w.abs().max(1.0));
            let pred = m.predict(&pts[i]).unwrap();
            assert!((pred - y[i]).abs() < 1e-6 * y[i].abs());
        }
    }

    #[test]
    fn duplicate_centers_are_singular() {
        let pts = vec![vec![0.1, 0.1], vec![0.5, 0.5], vec![0.1, 0.1]];
        assert!(matches!(
            fit(&pts, &[1.0, 2.0, 3.0], 1.0, 0.0),
            Err(RbfError::Singular(_))
        ));
        assert!(fit(&pts, &[1.0, 2.0, 3.0], 1.0, 1e-3).is_ok());
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(fit(&[], &[], 1.0, 0.0), Err(RbfError::Empty)));
        assert!(matches!(
            fit(&[vec![0.0]], &[1.0, 2.0], 1.0, 0.0),
            Err(RbfError::DimensionMismatch(_))
        ));
        assert!(matches!(
            fit(&[vec![0.0]], &[1.0], 0.0, 0.0),
            Err(RbfError::InvalidWidth(_))
        ));
        let m = fit(&[vec![0.0, 0.0]], &[1.0], 1.0, 0.0).unwrap();
        assert!(matches!(
            m.predict(&[0.0]),
            Err(RbfError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn far_query_decays() {
        let pts = vec![vec![0.0, 0.0], vec![0.3, 0.1], vec![0.1, 0.4]];
        let m = fit(&pts, &[1.0, -4.0, 2.0], 0.5, 0.0).unwrap();
        let total: f64 = m.weights().iter().map(|w| w.abs()).sum();
        let out = m.predict(&[20.0 * 0.5 + 0.5, 0.0]).unwrap();
        assert!(out.abs() < 1e-80 * total, "{out}");
    }

    #[test]
    fn midpoint_matches_direct_kernel_sum() {
        let pts = vec![vec![0.0], vec![1.0]];
        let m = fit(&pts, &[2.0, 4.0], 0.8, 0.0).unwrap();
        let w = m.weights();
        let direct =
            w[0] * (-0.25f64 / (2.0 * 0.64)).exp() + w[1] * (-0.25f64 / (2.0 * 0.64)).exp();
        assert!((m.predict(&[0.5]).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            rmse(&[1.0], &[1.0, 2.0]),
            Err(RbfError::DimensionMismatch(_))
        ));
        assert!(matches!(rmse(&[], &[]), Err(RbfError::Empty)));
    }

    #[test]
    fn median_distance() {
        let pts = vec![vec![0.0], vec![1.0], vec![3.0]];
        // distances 1, 2, 3
        assert_eq!(median_pairwise_distance(&pts), 2.0);
        assert_eq!(median_pairwise_distance(&pts[..1]), 1.0);
    }

    fn linear_table(missing_every: usize) -> AttributeTable {
        let g = VolumeHeader::with_dims(10, 10, 5);
        let rows = (0..g.voxel_count())
            .map(|idx| {
                (missing_every == usize::MAX || idx % missing_every != 3).then(|| {
                    let c = normalized_coordinates(&g, idx);
                    let base = 0.2 + 0.5 * c[0] - 0.3 * c[1] + 0.1 * c[2];
                    TextureVector::from_array([base, 1.0 - base, 10.0 * base, 2.0 * c[2]])
                })
            })
            .collect();
        AttributeTable::new(g, rows)
    }

    #[test]
    fn complete_table_passes_through() {
        let t = linear_table(usize::MAX);
        assert_eq!(t.missing_count(), 0);
        let (out, report) = fill_missing(&t, &RbfSettings::default()).unwrap();
        assert_eq!(out, t);
        assert_eq!(report.attributes.len(), 4);
        assert!(report
            .attributes
            .iter()
            .all(|a| a.training_rmse.is_finite() && a.testing_rmse.unwrap() >= 0.0));
    }

    #[test]
    fn single_missing_row_filled() {
        let g = VolumeHeader::with_dims(6, 6, 2);
        let mut rows: Vec<_> = (0..72)
            .map(|i| Some(TextureVector::from_array([i as f64 * 0.01, 0.5, 1.0, 2.0])))
            .collect();
        rows[17] = None;
        let t = AttributeTable::new(g, rows.clone());
        let (out, _) = fill_missing(&t, &RbfSettings::default()).unwrap();
        assert_eq!(out.missing_count(), 0);
        for (i, (a, b)) in rows.iter().zip(out.rows()).enumerate() {
            match a {
                Some(v) => assert_eq!(Some(*v), *b),
                None => assert_eq!(i, 17),
            }
        }
    }

    #[test]
    fn deterministic_and_non_destructive() {
        let t = linear_table(10);
        let s = RbfSettings {
            max_centers: 300,
            ..Default::default()
        };
        let (a, ra) = fill_missing(&t, &s).unwrap();
        let (b, rb) = fill_missing(&t, &s).unwrap();
        assert_eq!(ra, rb);
        for ((x, y), orig) in a.rows().iter().zip(b.rows()).zip(t.rows()) {
            let (x, y) = (x.unwrap().to_array(), y.unwrap().to_array());
            assert_eq!(x.map(f64::to_bits), y.map(f64::to_bits));
            if let Some(o) = orig {
                assert_eq!(o.to_array().map(f64::to_bits), x.map(f64::to_bits));
            }
        }
    }

    #[test]
    fn all_missing_is_error() {
        let g = VolumeHeader::with_dims(2, 2, 2);
        let t = AttributeTable::new(g, vec![None; 8]);
        assert!(matches!(
            fill_missing(&t, &RbfSettings::default()),
            Err(RbfError::AllMissing(_))
        ));
    }

    #[test]
    fn training_error_grows_with_regularization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.random(), rng.random(), rng.random()])
            .collect();
        let y: Vec<f64> = pts
            .iter()
            .map(|p| (3.0 * p[0]).sin() + p[1] * p[2] + rng.random::<f64>() * 0.1)
            .collect();
        let mut last = -1.0;
        for lambda in [0.0, 1e-4, 1e-2] {
            let m = fit(&pts, &y, 0.3, lambda).unwrap();
            let e = rmse(&m.predict_many(&pts).unwrap(), &y).unwrap();
            assert!(e >= last, "lambda {lambda}: {e} < {last}");
            last = e;
        }
    }
}
