//! Generative topographic mapping.
//!
//! A regular grid of latent points in `[-1, 1]^2` is mapped into data space
//! through a Gaussian basis expansion with a bias term, `y_k = W^T phi(x_k)`.
//! Each mapped point is the center of an isotropic Gaussian with precision
//! `beta`; the data density is the equal-weight mixture of those Gaussians.
//! Parameters start from the principal-component plane and are refined by
//! EM. Responsibilities are never materialized during training: each E-step
//! reduces directly to the sufficient statistics the M-step needs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pca::{principal_components, PcaError};

/// Upper bound on the noise precision; reached only by degenerate perfect fits.
pub const BETA_MAX: f64 = 1e8;

const CHUNK_ROWS: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum GtmError {
    #[error("invalid model geometry: {0}")]
    Geometry(String),
    #[error("degenerate training data: {0}")]
    Degenerate(String),
    #[error("design matrix is numerically rank deficient (singular value ratio {ratio:e}); adjust the basis width")]
    RankDeficient { ratio: f64 },
    #[error("M-step normal equations are singular; increase map_regularization")]
    SingularNormalEquations,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid training settings: {0}")]
    Settings(String),
}

impl From<PcaError> for GtmError {
    fn from(e: PcaError) -> Self {
        GtmError::Degenerate(e.to_string())
    }
}

fn axis_coords(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect()
}

fn regular_grid(rows: usize, cols: usize) -> DMatrix<f64> {
    let xs = axis_coords(cols);
    let ys = axis_coords(rows);
    DMatrix::from_fn(rows * cols, 2, |k, d| {
        if d == 0 {
            xs[k % cols]
        } else {
            ys[k / cols]
        }
    })
}

/// Latent points `x_k` on a `rows x cols` grid over `[-1, 1]^2`, node
/// `k = r * cols + c` at `(x(c), y(r))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    rows: usize,
    cols: usize,
    nodes: DMatrix<f64>,
}

impl LatentGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self, GtmError> {
        if rows == 0 || cols == 0 {
            return Err(GtmError::Geometry(format!(
                "latent grid {rows}x{cols} is empty"
            )));
        }
        Ok(Self {
            rows,
            cols,
            nodes: regular_grid(rows, cols),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `K x 2` node coordinates.
    pub fn nodes(&self) -> &DMatrix<f64> {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> [f64; 2] {
        [self.nodes[(k, 0)], self.nodes[(k, 1)]]
    }
}

/// Gaussian basis centers on a regular sub-grid plus an implicit bias.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    rows: usize,
    cols: usize,
    centers: DMatrix<f64>,
    sigma: f64,
}

impl BasisSet {
    pub fn new(rows: usize, cols: usize, sigma: f64) -> Result<Self, GtmError> {
        if rows == 0 || cols == 0 {
            return Err(GtmError::Geometry(format!(
                "basis grid {rows}x{cols} is empty"
            )));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(GtmError::Geometry(format!(
                "basis width must be > 0, got {sigma}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            centers: regular_grid(rows, cols),
            sigma,
        })
    }

    /// Basis whose width is `scale` times the spacing between centers.
    pub fn with_spacing_scale(rows: usize, cols: usize, scale: f64) -> Result<Self, GtmError> {
        Self::new(rows, cols, scale * Self::spacing(rows, cols))
    }

    /// Smallest spacing between neighbouring centers; 2 for a single center.
    pub fn spacing(rows: usize, cols: usize) -> f64 {
        let step = |n: usize| if n > 1 { 2.0 / (n - 1) as f64 } else { 2.0 };
        step(rows).min(step(cols))
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// `K x (M + 1)` design matrix; the last column is the bias.
pub fn build_design(grid: &LatentGrid, basis: &BasisSet) -> DMatrix<f64> {
    let k = grid.len();
    let m = basis.len();
    let denom = 2.0 * basis.sigma * basis.sigma;
    DMatrix::from_fn(k, m + 1, |row, col| {
        if col == m {
            return 1.0;
        }
        let dx = grid.nodes[(row, 0)] - basis.centers[(col, 0)];
        let dy = grid.nodes[(row, 1)] - basis.centers[(col, 1)];
        (-(dx * dx + dy * dy) / denom).exp()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtmModel {
    grid: LatentGrid,
    basis: BasisSet,
    phi: DMatrix<f64>,
    w: DMatrix<f64>,
    beta: f64,
}

impl GtmModel {
    pub fn new(
        grid: LatentGrid,
        basis: BasisSet,
        w: DMatrix<f64>,
        beta: f64,
    ) -> Result<Self, GtmError> {
        let phi = build_design(&grid, &basis);
        if w.nrows() != phi.ncols() || w.ncols() == 0 {
            return Err(GtmError::DimensionMismatch(format!(
                "weights are {}x{}, design has {} columns",
                w.nrows(),
                w.ncols(),
                phi.ncols()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(GtmError::Geometry("weights must be finite".into()));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(GtmError::Geometry(format!("beta must be > 0, got {beta}")));
        }
        Ok(Self {
            grid,
            basis,
            phi,
            w,
            beta,
        })
    }

    pub fn grid(&self) -> &LatentGrid {
        &self.grid
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn data_dim(&self) -> usize {
        self.w.ncols()
    }

    /// `K x D` images of the latent nodes.
    pub fn mapped_centers(&self) -> DMatrix<f64> {
        &self.phi * &self.w
    }

    fn check_data(&self, data: &DMatrix<f64>) -> Result<(), GtmError> {
        if data.ncols() != self.data_dim() {
            return Err(GtmError::DimensionMismatch(format!(
                "data has {} columns, model expects {}",
                data.ncols(),
                self.data_dim()
            )));
        }
        Ok(())
    }

    /// Posterior-mean latent positions and responsibility-weighted
    /// reconstructions for every row, without storing the full responsibility
    /// matrix. Returns `(N x 2 means, N x D reconstructions)`.
    pub fn project(&self, data: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), GtmError> {
        self.check_data(data)?;
        let centers = CenterTable::new(&self.mapped_centers());
        let rows = RowMajor::new(data);
        let d = data.ncols();
        let k = self.grid.len();
        let per_row: Vec<([f64; 2], Vec<f64>)> = (0..data.nrows())
            .into_par_iter()
            .map_init(
                || vec![0.0; k],
                |r, n| {
                    posterior_row(&centers, self.beta, rows.row(n), r);
                    let mut mean = [0.0; 2];
                    let mut recon = vec![0.0; d];
                    for (kk, &rk) in r.iter().enumerate() {
                        mean[0] += rk * self.grid.nodes[(kk, 0)];
                        mean[1] += rk * self.grid.nodes[(kk, 1)];
                        for (dd, v) in recon.iter_mut().enumerate() {
                            *v += rk * centers.at(kk, dd);
                        }
                    }
                    (mean.map(|v| v.clamp(-1.0, 1.0)), recon)
                },
            )
            .collect();
        let means = DMatrix::from_fn(data.nrows(), 2, |n, c| per_row[n].0[c]);
        let recon = DMatrix::from_fn(data.nrows(), d, |n, c| per_row[n].1[c]);
        Ok((means, recon))
    }
}

/// Row-major copy of the mapped centers for cache-friendly distance loops.
struct CenterTable {
    d: usize,
    values: Vec<f64>,
}

impl CenterTable {
    fn new(y: &DMatrix<f64>) -> Self {
        let d = y.ncols();
        let mut values = Vec::with_capacity(y.len());
        for row in y.row_iter() {
            values.extend(row.iter());
        }
        Self { d, values }
    }

    #[inline]
    fn at(&self, k: usize, dd: usize) -> f64 {
        self.values[k * self.d + dd]
    }

    fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.d)
    }
}

struct RowMajor {
    d: usize,
    values: Vec<f64>,
}

impl RowMajor {
    fn new(m: &DMatrix<f64>) -> Self {
        let d = m.ncols();
        let mut values = Vec::with_capacity(m.len());
        for row in m.row_iter() {
            values.extend(row.iter());
        }
        Self { d, values }
    }

    #[inline]
    fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.d..(n + 1) * self.d]
    }
}

/// Writes normalized responsibilities for one data row into `r` and returns
/// that row's log-likelihood term `ln( (1/K) sum_k N(t | y_k, 1/beta) )`.
fn posterior_row(centers: &CenterTable, beta: f64, t: &[f64], r: &mut [f64]) -> f64 {
    let d = t.len() as f64;
    let mut max = f64::NEG_INFINITY;
    for (rk, y) in r.iter_mut().zip(centers.iter()) {
        let dist: f64 = y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        *rk = -0.5 * beta * dist;
        max = max.max(*rk);
    }
    let mut sum = 0.0;
    for rk in r.iter_mut() {
        *rk = (*rk - max).exp();
        sum += *rk;
    }
    for rk in r.iter_mut() {
        *rk /= sum;
    }
    max + sum.ln() + 0.5 * d * (beta / (2.0 * PI)).ln() - (r.len() as f64).ln()
}

/// Pairwise summation; the split points depend only on the length.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().fold(0.0, |a, b| a + b);
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Posterior node probabilities, one row per data point.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    /// `N x K`
    pub r: DMatrix<f64>,
    pub log_likelihood: f64,
}

pub fn e_step(model: &GtmModel, data: &DMatrix<f64>) -> Result<Responsibilities, GtmError> {
    model.check_data(data)?;
    let centers = CenterTable::new(&model.mapped_centers());
    let rows = RowMajor::new(data);
    let k = model.grid.len();
    let n = data.nrows();
    let mut flat = vec![0.0; n * k];
    let ll: Vec<f64> = flat
        .par_chunks_mut(k)
        .enumerate()
        .map(|(i, r)| posterior_row(&centers, model.beta, rows.row(i), r))
        .collect();
    Ok(Responsibilities {
        r: DMatrix::from_row_slice(n, k, &flat),
        log_likelihood: pairwise_sum(&ll),
    })
}

/// Sufficient statistics of one E-step: node weights `G_kk = sum_n r_nk`,
/// `R^T T` (`K x D`), `sum_n |t_n|^2`, and the log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct EStats {
    pub node_weights: Vec<f64>,
    pub weighted_data: DMatrix<f64>,
    pub data_sq_norm: f64,
    pub n: usize,
    pub log_likelihood: f64,
}

impl EStats {
    pub fn from_responsibilities(
        resp: &Responsibilities,
        data: &DMatrix<f64>,
    ) -> Result<Self, GtmError> {
        if resp.r.nrows() != data.nrows() {
            return Err(GtmError::DimensionMismatch(format!(
                "{} responsibility rows for {} data rows",
                resp.r.nrows(),
                data.nrows()
            )));
        }
        let node_weights = resp.r.row_sum().iter().copied().collect();
        let weighted_data = resp.r.transpose() * data;
        Ok(Self {
            node_weights,
            weighted_data,
            data_sq_norm: data.iter().map(|v| v * v).sum(),
            n: data.nrows(),
            log_likelihood: resp.log_likelihood,
        })
    }
}

/// E-step reduced to sufficient statistics. Rows are processed in fixed-size
/// chunks whose partial sums are merged in chunk order, so the result is the
/// same for any thread count.
pub fn e_step_stats(model: &GtmModel, data: &DMatrix<f64>) -> Result<EStats, GtmError> {
    model.check_data(data)?;
    let centers = CenterTable::new(&model.mapped_centers());
    let rows = RowMajor::new(data);
    let k = model.grid.len();
    let d = data.ncols();
    let n = data.nrows();

    struct Partial {
        g: Vec<f64>,
        rt: Vec<f64>,
        tt: f64,
        ll: Vec<f64>,
    }

    let partials: Vec<Partial> = (0..n.div_ceil(CHUNK_ROWS))
        .into_par_iter()
        .map(|c| {
            let mut p = Partial {
                g: vec![0.0; k],
                rt: vec![0.0; k * d],
                tt: 0.0,
                ll: Vec::with_capacity(CHUNK_ROWS),
            };
            let mut r = vec![0.0; k];
            for i in c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(n) {
                let t = rows.row(i);
                p.ll.push(posterior_row(&centers, model.beta, t, &mut r));
                for (kk, &rk) in r.iter().enumerate() {
                    p.g[kk] += rk;
                    for (dd, &tv) in t.iter().enumerate() {
                        p.rt[kk * d + dd] += rk * tv;
                    }
                }
                p.tt += t.iter().map(|v| v * v).sum::<f64>();
            }
            p
        })
        .collect();

    let mut g = vec![0.0; k];
    let mut rt = vec![0.0; k * d];
    let mut tt = 0.0;
    let mut ll = Vec::with_capacity(n);
    for p in partials {
        g.iter_mut().zip(&p.g).for_each(|(a, b)| *a += b);
        rt.iter_mut().zip(&p.rt).for_each(|(a, b)| *a += b);
        tt += p.tt;
        ll.extend(p.ll);
    }
    Ok(EStats {
        node_weights: g,
        weighted_data: DMatrix::from_row_slice(k, d, &rt),
        data_sq_norm: tt,
        n,
        log_likelihood: pairwise_sum(&ll),
    })
}

/// Weight and precision update from E-step statistics.
///
/// Solves `(Phi^T G Phi + (alpha / beta_old) I) W = Phi^T R T`, then sets
/// `1 / beta` to the responsibility-weighted mean squared distance per
/// dimension under the new centers, capped at [`BETA_MAX`].
pub fn m_step_from_stats(
    stats: &EStats,
    phi: &DMatrix<f64>,
    map_regularization: f64,
    beta_old: f64,
) -> Result<(DMatrix<f64>, f64), GtmError> {
    let k = phi.nrows();
    if stats.node_weights.len() != k {
        return Err(GtmError::DimensionMismatch(format!(
            "{} node weights for {k} design rows",
            stats.node_weights.len()
        )));
    }
    let d = stats.weighted_data.ncols();
    let mut g_phi = phi.clone();
    for (kk, mut row) in g_phi.row_iter_mut().enumerate() {
        row *= stats.node_weights[kk];
    }
    let mut a = phi.transpose() * g_phi;
    let lambda = map_regularization / beta_old;
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let b = phi.transpose() * &stats.weighted_data;
    let w = match a.clone().cholesky() {
        Some(chol) => chol.solve(&b),
        None => a.lu().solve(&b).ok_or(GtmError::SingularNormalEquations)?,
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(GtmError::SingularNormalEquations);
    }

    // sum_nk r_nk |y_k - t_n|^2 = sum_k G_k |y_k|^2 - 2 sum_k y_k.(R^T T)_k + sum_n |t_n|^2
    let y = phi * &w;
    let mut sse = stats.data_sq_norm;
    for kk in 0..k {
        let yk = y.row(kk);
        sse +=
            stats.node_weights[kk] * yk.norm_squared() - 2.0 * yk.dot(&stats.weighted_data.row(kk));
    }
    let beta_inv = sse.max(0.0) / (stats.n * d) as f64;
    let beta = if beta_inv <= 1.0 / BETA_MAX {
        BETA_MAX
    } else {
        1.0 / beta_inv
    };
    Ok((w, beta))
}

pub fn m_step(
    resp: &Responsibilities,
    data: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    map_regularization: f64,
    beta_old: f64,
) -> Result<(DMatrix<f64>, f64), GtmError> {
    if resp.r.ncols() != phi.nrows() {
        return Err(GtmError::DimensionMismatch(format!(
            "{} responsibility columns for {} latent nodes",
            resp.r.ncols(),
            phi.nrows()
        )));
    }
    m_step_from_stats(
        &EStats::from_responsibilities(resp, data)?,
        phi,
        map_regularization,
        beta_old,
    )
}

/// Least-squares solve of `phi W = target` with a numerical rank check.
fn design_least_squares(
    phi: &DMatrix<f64>,
    target: &DMatrix<f64>,
) -> Result<DMatrix<f64>, GtmError> {
    let svd = phi.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if ratio < 1e-13 {
        return Err(GtmError::RankDeficient { ratio });
    }
    svd.solve(target, 0.0)
        .map_err(|e| GtmError::Geometry(e.to_string()))
}

/// Both candidate noise variances considered at initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitNoise {
    /// Variance along the first discarded principal direction.
    pub residual_eigenvalue: f64,
    /// Half the mean squared distance from each mapped center to its nearest neighbour.
    pub half_neighbor_sq_distance: f64,
}

impl InitNoise {
    pub fn beta(&self) -> f64 {
        1.0 / self.residual_eigenvalue.max(self.half_neighbor_sq_distance)
    }
}

fn half_mean_nearest_sq_distance(y: &DMatrix<f64>) -> f64 {
    let k = y.nrows();
    if k < 2 {
        return 0.0;
    }
    let table = CenterTable::new(y);
    let nearest: Vec<f64> = (0..k)
        .map(|a| {
            let ya: Vec<f64> = (0..table.d).map(|dd| table.at(a, dd)).collect();
            table
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(_, yb)| {
                    yb.iter()
                        .zip(&ya)
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    0.5 * nearest.iter().sum::<f64>() / k as f64
}

/// Initial weights from the principal-component plane.
///
/// Latent coordinates, standardized per axis, are mapped through the top two
/// principal directions scaled by their standard deviations and shifted by
/// the data mean; `W` is the least-squares fit of that target through the
/// design matrix. Returns `W` together with both noise candidates; the
/// initial precision is [`InitNoise::beta`].
pub fn pca_init(
    data: &DMatrix<f64>,
    grid: &LatentGrid,
    phi: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, InitNoise), GtmError> {
    if phi.nrows() != grid.len() {
        return Err(GtmError::DimensionMismatch(format!(
            "design has {} rows for {} latent nodes",
            phi.nrows(),
            grid.len()
        )));
    }
    let pcs = principal_components(data)?;
    let d = data.ncols();
    if pcs.eigenvalues[0] <= 0.0 {
        return Err(GtmError::Degenerate("data covariance is zero".into()));
    }
    let latent_dim = 2.min(d);

    let mut x = grid.nodes().clone();
    for mut col in x.column_iter_mut() {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let std = (col.norm_squared() / (n - 1.0).max(1.0)).sqrt();
        if std > 0.0 {
            col /= std;
        }
    }
    let mut a = DMatrix::zeros(2, d);
    for l in 0..latent_dim {
        let scale = pcs.eigenvalues[l].sqrt();
        for j in 0..d {
            a[(l, j)] = pcs.components[(j, l)] * scale;
        }
    }
    let mut target = x * a;
    for (j, mut col) in target.column_iter_mut().enumerate() {
        col.add_scalar_mut(pcs.mean[j]);
    }
    let w = design_least_squares(phi, &target)?;
    let y = phi * &w;
    let noise = InitNoise {
        residual_eigenvalue: pcs.eigenvalues.get(latent_dim).copied().unwrap_or(0.0),
        half_neighbor_sq_distance: half_mean_nearest_sq_distance(&y),
    };
    if !(noise.beta().is_finite() && noise.beta() > 0.0) {
        return Err(GtmError::Degenerate(
            "initial noise variance is zero".into(),
        ));
    }
    Ok((w, noise))
}

/// Model geometry and EM stopping rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GtmSettings {
    pub grid: [usize; 2],
    pub basis: [usize; 2],
    /// Absolute basis width; `None` uses `sigma_scale` times the center spacing.
    pub sigma: Option<f64>,
    pub sigma_scale: f64,
    pub map_regularization: f64,
    /// Relative log-likelihood change below which training stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Training rows kept by the deterministic subsample.
    pub max_train_rows: usize,
}

impl Default for GtmSettings {
    fn default() -> Self {
        Self {
            grid: [30, 30],
            basis: [15, 15],
            sigma: None,
            sigma_scale: 1.0,
            map_regularization: 1e-3,
            tolerance: 1e-5,
            max_iterations: 200,
            seed: 0,
            max_train_rows: 50_000,
        }
    }
}

impl GtmSettings {
    pub fn validate(&self) -> Result<(), GtmError> {
        let bad = |m: String| Err(GtmError::Settings(m));
        if self.grid.contains(&0) || self.basis.contains(&0) {
            return bad(format!(
                "grid {:?} and basis {:?} must be nonempty",
                self.grid, self.basis
            ));
        }
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("sigma must be > 0, got {s}"));
            }
        }
        if !(self.sigma_scale.is_finite() && self.sigma_scale > 0.0) {
            return bad(format!("sigma_scale must be > 0, got {}", self.sigma_scale));
        }
        if !(self.map_regularization.is_finite() && self.map_regularization >= 0.0) {
            return bad(format!(
                "map_regularization must be >= 0, got {}",
                self.map_regularization
            ));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return bad(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if self.max_train_rows == 0 {
            return bad("max_train_rows must be at least 1".into());
        }
        Ok(())
    }

    pub fn latent_grid(&self) -> Result<LatentGrid, GtmError> {
        LatentGrid::new(self.grid[0], self.grid[1])
    }

    pub fn basis_set(&self) -> Result<BasisSet, GtmError> {
        match self.sigma {
            Some(s) => BasisSet::new(self.basis[0], self.basis[1], s),
            None => BasisSet::with_spacing_scale(self.basis[0], self.basis[1], self.sigma_scale),
        }
    }
}

/// Log-likelihood less the ridge penalty `(alpha / 2) |W|^2`. This is the
/// quantity each EM cycle cannot decrease; with `alpha = 0` it is the plain
/// log-likelihood.
pub fn penalized_log_likelihood(
    log_likelihood: f64,
    w: &DMatrix<f64>,
    map_regularization: f64,
) -> f64 {
    log_likelihood - 0.5 * map_regularization * w.norm_squared()
}

/// Likelihood values are [`penalized_log_likelihood`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: GtmModel,
    /// Objective of the PCA-initialized model.
    pub initial_log_likelihood: f64,
    /// Objective after each EM cycle; the last entry belongs to `model`.
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// PCA initialization followed by EM until the relative change of the
/// penalized log-likelihood drops below the tolerance or the iteration cap
/// is reached.
pub fn train(data: &DMatrix<f64>, settings: &GtmSettings) -> Result<TrainOutcome, GtmError> {
    settings.validate()?;
    let (n, d) = data.shape();
    if n <= d {
        return Err(GtmError::Degenerate(format!(
            "{n} samples in {d} dimensions"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(GtmError::Degenerate(
            "data contains non-finite values".into(),
        ));
    }
    let grid = settings.latent_grid()?;
    let basis = settings.basis_set()?;
    let phi = build_design(&grid, &basis);
    let (w, noise) = pca_init(data, &grid, &phi)?;
    let mut model = GtmModel {
        grid,
        basis,
        phi,
        w,
        beta: noise.beta(),
    };

    let alpha = settings.map_regularization;
    let mut stats = e_step_stats(&model, data)?;
    let initial_log_likelihood = penalized_log_likelihood(stats.log_likelihood, &model.w, alpha);
    let mut previous = initial_log_likelihood;
    let mut trace = Vec::with_capacity(settings.max_iterations);
    let mut converged = false;
    for _ in 0..settings.max_iterations {
        let (w, beta) = m_step_from_stats(&stats, &model.phi, alpha, model.beta)?;
        model.w = w;
        model.beta = beta;
        stats = e_step_stats(&model, data)?;
        let ll = penalized_log_likelihood(stats.log_likelihood, &model.w, alpha);
        trace.push(ll);
        if ((ll - previous) / previous.abs().max(f64::MIN_POSITIVE)).abs() < settings.tolerance {
            converged = true;
            break;
        }
        previous = ll;
    }
    Ok(TrainOutcome {
        model,
        initial_log_likelihood,
        trace,
        converged,
    })
}

/// Posterior means `sum_k r_nk x_k`, one row per data point. Clamped so
/// rounding cannot push a convex combination off the latent square.
pub fn project_mean(resp: &Responsibilities, grid: &LatentGrid) -> DMatrix<f64> {
    (&resp.r * grid.nodes()).map(|v| v.clamp(-1.0, 1.0))
}

/// Node of highest responsibility per row, ties going to the lower index.
pub fn project_mode(resp: &Responsibilities, grid: &LatentGrid) -> DMatrix<f64> {
    let n = resp.r.nrows();
    let mut out = DMatrix::zeros(n, 2);
    for (i, row) in resp.r.row_iter().enumerate() {
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        out[(i, 0)] = grid.nodes[(best, 0)];
        out[(i, 1)] = grid.nodes[(best, 1)];
    }
    out
}

/// Serializable model parameters; the grid, basis and design matrix are
/// rebuilt from the dimensions and width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtmParameters {
    pub grid: [usize; 2],
    pub basis: [usize; 2],
    pub sigma: f64,
    pub beta: f64,
    pub data_dim: usize,
    /// `(M + 1) x D` weights, row-major.
    pub w: Vec<f64>,
}

impl From<&GtmModel> for GtmParameters {
    fn from(m: &GtmModel) -> Self {
        let mut w = Vec::with_capacity(m.w.len());
        for row in m.w.row_iter() {
            w.extend(row.iter());
        }
        Self {
            grid: [m.grid.rows, m.grid.cols],
            basis: [m.basis.rows, m.basis.cols],
            sigma: m.basis.sigma,
            beta: m.beta,
            data_dim: m.w.ncols(),
            w,
        }
    }
}

impl TryFrom<&GtmParameters> for GtmModel {
    type Error = GtmError;

    fn try_from(p: &GtmParameters) -> Result<Self, GtmError> {
        let grid = LatentGrid::new(p.grid[0], p.grid[1])?;
        let basis = BasisSet::new(p.basis[0], p.basis[1], p.sigma)?;
        let rows = basis.len() + 1;
        if p.data_dim == 0 || p.w.len() != rows * p.data_dim {
            return Err(GtmError::DimensionMismatch(format!(
                "{} weights for a {rows}x{} matrix",
                p.w.len(),
                p.data_dim
            )));
        }
        GtmModel::new(
            grid,
            basis,
            DMatrix::from_row_slice(rows, p.data_dim, &p.w),
            p.beta,
        )
    }
}

/// Mean Euclidean distance from each row to its reconstruction.
pub fn mean_reconstruction_error(data: &DMatrix<f64>, recon: &DMatrix<f64>) -> f64 {
    let d: Vec<f64> = (0..data.nrows())
        .map(|n| (data.row(n) - recon.row(n)).norm())
        .collect();
    pairwise_sum(&d) / data.nrows() as f64
}

/// Squared distances from one point to every node; used by tests and diagnostics.
pub fn node_sq_distances(model: &GtmModel, t: &DVector<f64>) -> Vec<f64> {
    let y = model.mapped_centers();
    y.row_iter()
        .map(|row| (row.transpose() - t).norm_squared())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn grid_geometry() {
        let g = LatentGrid::new(30, 30).unwrap();
        assert_eq!(g.len(), 900);
        assert_eq!(g.node(0), [-1.0, -1.0]);
        assert_eq!(g.node(29), [1.0, -1.0]);
        assert_eq!(g.node(870), [-1.0, 1.0]);
        assert_eq!(g.node(899), [1.0, 1.0]);
        let mut nodes: Vec<[u64; 2]> = (0..900).map(|k| g.node(k).map(f64::to_bits)).collect();
        nodes.sort();
        nodes.dedup();
        assert_eq!(nodes.len(), 900);
        assert!(LatentGrid::new(0, 3).is_err());
    }

    #[test]
    fn design_entries() {
        let grid = LatentGrid::new(30, 30).unwrap();
        let basis = BasisSet::with_spacing_scale(15, 15, 1.0).unwrap();
        let phi = build_design(&grid, &basis);
        assert_eq!(phi.shape(), (900, 226));
        // node (-1,-1) coincides with center (-1,-1)
        assert_eq!(phi[(0, 0)], 1.0);
        assert!(phi.column(225).iter().all(|&v| v == 1.0));
        assert!(phi.columns(0, 225).iter().all(|&v| v > 0.0 && v <= 1.0));

        let wide = BasisSet::new(15, 15, 1e6).unwrap();
        let phi = build_design(&grid, &wide);
        assert!(phi.iter().all(|&v| (v - 1.0).abs() < 1e-9));

        let grid = LatentGrid::new(2, 2).unwrap();
        let basis = BasisSet::new(1, 1, 1.0).unwrap();
        let phi = build_design(&grid, &basis);
        for k in 0..4 {
            let [x, y] = grid.node(k);
            assert!((phi[(k, 0)] - (-(x * x + y * y) / 2.0).exp()).abs() < 1e-15);
            assert_eq!(phi[(k, 1)], 1.0);
        }
    }

    fn small_model(
        rng: &mut ChaCha8Rng,
        grid: (usize, usize),
        basis: (usize, usize),
        d: usize,
    ) -> GtmModel {
        let grid = LatentGrid::new(grid.0, grid.1).unwrap();
        let basis = BasisSet::new(basis.0, basis.1, 0.8).unwrap();
        let w = random_matrix(basis.len() + 1, d, rng);
        GtmModel::new(grid, basis, w, 1.7).unwrap()
    }

    #[test]
    fn single_node_takes_all_responsibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = small_model(&mut rng, (1, 1), (1, 1), 3);
        let data = random_matrix(6, 3, &mut rng);
        let resp = e_step(&model, &data).unwrap();
        assert!(resp.r.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn equidistant_point_splits_evenly() {
        let grid = LatentGrid::new(1, 2).unwrap();
        let basis = BasisSet::new(1, 2, 1.0).unwrap();
        // mirrored weights put the two mapped centers at (+-(1 - e), 0)
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        let model = GtmModel::new(grid, basis, w, 2.0).unwrap();
        let y = model.mapped_centers();
        assert_eq!(y[(0, 0)], -y[(1, 0)]);
        let data = DMatrix::from_row_slice(1, 2, &[0.0, 3.0]);
        let resp = e_step(&model, &data).unwrap();
        assert_eq!(resp.r[(0, 0)], 0.5);
        assert_eq!(resp.r[(0, 1)], 0.5);
    }

    #[test]
    fn project_mean_and_mode() {
        let grid = LatentGrid::new(3, 3).unwrap();
        let k = grid.len();
        let mut r = DMatrix::zeros(3, k);
        r[(0, 4)] = 1.0;
        r.row_mut(1).fill(1.0 / k as f64);
        r[(2, 3)] = 0.4;
        r[(2, 7)] = 0.4;
        r[(2, 0)] = 0.2;
        let resp = Responsibilities {
            r,
            log_likelihood: 0.0,
        };
        let mean = project_mean(&resp, &grid);
        assert_eq!([mean[(0, 0)], mean[(0, 1)]], grid.node(4));
        assert!(mean[(1, 0)].abs() < 1e-15 && mean[(1, 1)].abs() < 1e-15);
        let mode = project_mode(&resp, &grid);
        assert_eq!([mode[(0, 0)], mode[(0, 1)]], grid.node(4));
        assert_eq!([mode[(2, 0)], mode[(2, 1)]], grid.node(3));
    }

    #[test]
    fn random_rows_project_by_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = LatentGrid::new(4, 5).unwrap();
        let mut r = DMatrix::from_fn(10, 20, |_, _| rng.random::<f64>());
        for mut row in r.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        let resp = Responsibilities {
            r: r.clone(),
            log_likelihood: 0.0,
        };
        let mean = project_mean(&resp, &grid);
        let mode = project_mode(&resp, &grid);
        for n in 0..10 {
            let mut acc = [0.0; 2];
            let mut best = (0, f64::NEG_INFINITY);
            for k in 0..20 {
                let x = grid.node(k);
                acc[0] += r[(n, k)] * x[0];
                acc[1] += r[(n, k)] * x[1];
                if r[(n, k)] > best.1 {
                    best = (k, r[(n, k)]);
                }
            }
            assert!((mean[(n, 0)] - acc[0]).abs() < 1e-14);
            assert!((mean[(n, 1)] - acc[1]).abs() < 1e-14);
            assert!(mean[(n, 0)].abs() <= 1.0 && mean[(n, 1)].abs() <= 1.0);
            assert_eq!([mode[(n, 0)], mode[(n, 1)]], grid.node(best.0));
        }
    }

    #[test]
    fn stats_match_materialized_responsibilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = small_model(&mut rng, (5, 6), (3, 3), 4);
        let data = random_matrix(700, 4, &mut rng);
        let resp = e_step(&model, &data).unwrap();
        let a = EStats::from_responsibilities(&resp, &data).unwrap();
        let b = e_step_stats(&model, &data).unwrap();
        assert_eq!(a.log_likelihood, b.log_likelihood);
        for (x, y) in a.node_weights.iter().zip(&b.node_weights) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!((a.weighted_data - b.weighted_data).abs().max() < 1e-10);
        assert!((a.data_sq_norm - b.data_sq_norm).abs() < 1e-9);
    }

    #[test]
    fn concentrated_responsibility_moves_center_to_weighted_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = LatentGrid::new(2, 2).unwrap();
        let basis = BasisSet::new(2, 2, 1.0).unwrap();
        let phi = build_design(&grid, &basis);
        let data = random_matrix(6, 3, &mut rng);
        let mut r = DMatrix::zeros(6, 4);
        r.column_mut(2).fill(1.0);
        let resp = Responsibilities {
            r,
            log_likelihood: 0.0,
        };
        // a lone occupied node leaves the normal equations rank one; a tiny ridge picks the minimum-norm fit
        let (w, beta) = m_step(&resp, &data, &phi, 1e-9, 1.0).unwrap();
        let y = &phi * &w;
        let mean = crate::pca::column_means(&data);
        for j in 0..3 {
            assert!(
                (y[(2, j)] - mean[j]).abs() < 1e-8,
                "{} vs {}",
                y[(2, j)],
                mean[j]
            );
        }
        assert!(beta > 0.0);
    }

    #[test]
    fn perfect_fit_hits_beta_ceiling() {
        let grid = LatentGrid::new(2, 2).unwrap();
        let basis = BasisSet::new(2, 2, 1.0).unwrap();
        let phi = build_design(&grid, &basis);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random_matrix(5, 2, &mut rng);
        let y = &phi * &w;
        let data = y.clone();
        let resp = Responsibilities {
            r: DMatrix::identity(4, 4),
            log_likelihood: 0.0,
        };
        let (_, beta) = m_step(&resp, &data, &phi, 0.0, 1.0).unwrap();
        assert_eq!(beta, BETA_MAX);
    }

    #[test]
    fn parameters_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = small_model(&mut rng, (4, 3), (2, 2), 4);
        let p = GtmParameters::from(&model);
        let json = serde_json::to_string(&p).unwrap();
        let back: GtmParameters = serde_json::from_str(&json).unwrap();
        assert_eq!(GtmModel::try_from(&back).unwrap(), model);
    }

    #[test]
    fn rank_collapse_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = random_matrix(100, 4, &mut rng);
        let grid = LatentGrid::new(10, 10).unwrap();
        for sigma in [1e6, 1e-3] {
            let basis = BasisSet::new(5, 5, sigma).unwrap();
            let phi = build_design(&grid, &basis);
            assert!(
                matches!(
                    pca_init(&data, &grid, &phi),
                    Err(GtmError::RankDeficient { .. })
                ),
                "sigma {sigma}"
            );
        }
    }

    #[test]
    fn repeated_point_is_degenerate() {
        let data = DMatrix::from_fn(20, 4, |_, j| j as f64);
        let s = GtmSettings {
            grid: [5, 5],
            basis: [3, 3],
            ..Default::default()
        };
        assert!(matches!(train(&data, &s), Err(GtmError::Degenerate(_))));
    }

    #[test]
    fn one_iteration_one_trace_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = random_matrix(200, 4, &mut rng);
        let s = GtmSettings {
            grid: [6, 6],
            basis: [3, 3],
            max_iterations: 1,
            ..Default::default()
        };
        let out = train(&data, &s).unwrap();
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn trace_tracks_penalized_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_matrix(60, 3, &mut rng);
        let s = GtmSettings {
            grid: [5, 5],
            basis: [3, 3],
            map_regularization: 0.5,
            max_iterations: 4,
            ..Default::default()
        };
        let out = train(&data, &s).unwrap();
        let ll = e_step(&out.model, &data).unwrap().log_likelihood;
        let penalty = 0.25 * out.model.weights().iter().map(|w| w * w).sum::<f64>();
        assert!((out.trace.last().unwrap() - (ll - penalty)).abs() < 1e-9 * ll.abs());
        let plain = train(
            &data,
            &GtmSettings {
                map_regularization: 0.0,
                ..s
            },
        )
        .unwrap();
        let ll = e_step(&plain.model, &data).unwrap().log_likelihood;
        assert!((plain.trace.last().unwrap() - ll).abs() < 1e-9 * ll.abs());
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-12);
    }
}
