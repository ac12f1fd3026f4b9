//! The workflow as composable commands sharing one configuration. Every
//! command reads and writes fixed file names under `output_dir`.

use std::error::Error as StdError;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{AttributeTable, ATTRIBUTE_NAMES};
use crate::config::{ConfigError, PipelineConfig, RenderSettings};
use crate::facies::{adjusted_rand_index, assemble_map, cluster_latent, ClusterModel, FaciesMap};
use crate::glcm::compute_attribute_table;
use crate::gtm::{train, GtmModel, GtmParameters, GtmSettings};
use crate::rbf::{fill_missing, InterpolationReport};
use crate::render::{render_grayscale, render_labels, write_legend};
use crate::synth::generate_synthetic;
use crate::volume::{load_volume, read_header, save_volume, Orientation, VolumeHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Attributes,
    Interpolate,
    Train,
    Classify,
    Render,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Synth => "synth",
            Stage::Attributes => "attributes",
            Stage::Interpolate => "interpolate",
            Stage::Train => "train",
            Stage::Classify => "classify",
            Stage::Render => "render",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        source: Box<dyn StdError + Send + Sync>,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Config(_) => None,
        }
    }
}

trait InStage<T> {
    fn in_stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: StdError + Send + Sync + 'static> InStage<T> for Result<T, E> {
    fn in_stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

fn stage_error(stage: Stage, message: String) -> PipelineError {
    PipelineError::Stage {
        stage,
        source: message.into(),
    }
}

fn io_context(path: &Path) -> impl FnOnce(io::Error) -> io::Error + '_ {
    move |e| io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}

/// Artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn attributes_csv(&self) -> PathBuf {
        self.dir.join("attributes.csv")
    }

    pub fn attribute_image(&self, name: &str) -> PathBuf {
        self.dir.join(format!("attribute_{name}.ppm"))
    }

    pub fn filled_csv(&self) -> PathBuf {
        self.dir.join("attributes_filled.csv")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.dir.join("interpolation_report.csv")
    }

    pub fn model_json(&self) -> PathBuf {
        self.dir.join("model.json")
    }

    pub fn trace_csv(&self) -> PathBuf {
        self.dir.join("ll_trace.csv")
    }

    pub fn facies_csv(&self) -> PathBuf {
        self.dir.join("facies.csv")
    }

    /// Stem of the f32 label volume.
    pub fn facies_volume(&self) -> PathBuf {
        self.dir.join("facies_labels")
    }

    pub fn facies_image(&self) -> PathBuf {
        self.dir.join("facies.ppm")
    }

    pub fn filled_image(&self, name: &str) -> PathBuf {
        self.dir.join(format!("filled_{name}.ppm"))
    }

    pub fn legend_svg(&self) -> PathBuf {
        self.dir.join("facies_legend.svg")
    }
}

fn ensure_dir(dir: &Path, stage: Stage) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)
        .map_err(io_context(dir))
        .in_stage(stage)
}

/// Header coordinate of the slice to draw, defaulting to the middle of the axis.
pub fn slice_index(header: &VolumeHeader, render: &RenderSettings) -> i64 {
    if let Some(i) = render.index {
        return i;
    }
    match render.orientation {
        Orientation::Inline => header.inline_at(header.n_inline() / 2),
        Orientation::Crossline => header.crossline_at(header.n_crossline() / 2),
        Orientation::Time => header.time_at(header.n_samples() / 2).round() as i64,
    }
}

fn slice_of<T: Clone>(
    header: &VolumeHeader,
    flat: Vec<T>,
    render: &RenderSettings,
    stage: Stage,
) -> Result<Array2<T>, PipelineError> {
    let pos = header
        .axis_index(render.orientation, slice_index(header, render))
        .in_stage(stage)?;
    let cube = Array3::from_shape_vec(header.dims(), flat).expect("one value per voxel");
    Ok(cube.index_axis(render.orientation.axis(), pos).to_owned())
}

fn render_attribute_slices(
    table: &AttributeTable,
    render: &RenderSettings,
    stage: Stage,
    path_for: impl Fn(&str) -> PathBuf,
) -> Result<(), PipelineError> {
    for (a, name) in ATTRIBUTE_NAMES.iter().enumerate() {
        let column: Vec<f32> = table
            .rows()
            .iter()
            .map(|r| r.map_or(f32::NAN, |t| t.to_array()[a] as f32))
            .collect();
        let slice = slice_of(table.geometry(), column, render, stage)?;
        render_grayscale(slice.view())
            .in_stage(stage)?
            .write_ppm(&path_for(name))
            .in_stage(stage)?;
    }
    Ok(())
}

/// Writes the synthetic volume to `input` and, when configured, its labels
/// to `ground_truth`.
pub fn cmd_synth(config: &PipelineConfig) -> Result<FaciesMap, PipelineError> {
    let stage = Stage::Synth;
    let layout = config.synth.resolved_layout();
    let (volume, truth) = generate_synthetic(&layout, config.synth.seed).in_stage(stage)?;
    if let Some(parent) = config.input.parent() {
        ensure_dir(parent, stage)?;
    }
    save_volume(&volume, &config.input).in_stage(stage)?;
    if let Some(gt) = &config.ground_truth {
        if let Some(parent) = gt.parent() {
            ensure_dir(parent, stage)?;
        }
        truth.write_csv(gt).in_stage(stage)?;
    }
    Ok(truth)
}

pub fn cmd_attributes(config: &PipelineConfig) -> Result<AttributeTable, PipelineError> {
    let stage = Stage::Attributes;
    let out = Artifacts::new(&config.output_dir);
    let volume = load_volume(&config.input).in_stage(stage)?;
    let table = compute_attribute_table(&volume, &config.glcm).in_stage(stage)?;
    ensure_dir(out.dir(), stage)?;
    table.write_csv(&out.attributes_csv()).in_stage(stage)?;
    render_attribute_slices(&table, &config.render, stage, |n| out.attribute_image(n))?;
    Ok(table)
}

pub fn cmd_interpolate(config: &PipelineConfig) -> Result<InterpolationReport, PipelineError> {
    let stage = Stage::Interpolate;
    let out = Artifacts::new(&config.output_dir);
    let header = read_header(&config.input).in_stage(stage)?;
    let table = AttributeTable::read_csv(&out.attributes_csv(), header).in_stage(stage)?;
    let (filled, report) = fill_missing(&table, &config.rbf).in_stage(stage)?;
    filled.write_csv(&out.filled_csv()).in_stage(stage)?;
    report.write_csv(&out.report_csv()).in_stage(stage)?;
    Ok(report)
}

/// Per-column z-scoring applied before training and classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Sample mean and standard deviation (n - 1) of each column.
    pub fn fit(data: &DMatrix<f64>) -> Result<Self, String> {
        let n = data.nrows();
        if n < 2 {
            return Err(format!("need at least 2 rows to standardize, got {n}"));
        }
        let mut mean = Vec::with_capacity(data.ncols());
        let mut std = Vec::with_capacity(data.ncols());
        for (j, col) in data.column_iter().enumerate() {
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
            let s = var.sqrt();
            if !(s.is_finite() && s > 0.0) {
                return Err(format!(
                    "attribute `{}` has zero variance",
                    ATTRIBUTE_NAMES.get(j).unwrap_or(&"?")
                ));
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, data: &mut DMatrix<f64>) {
        for (j, mut col) in data.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - self.mean[j]) / self.std[j]);
        }
    }
}

/// Everything needed to reapply a trained model to a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub geometry: VolumeHeader,
    pub settings: GtmSettings,
    pub standardization: Standardization,
    pub train_rows: usize,
    pub initial_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub parameters: GtmParameters,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self, Box<dyn StdError + Send + Sync>> {
        let text = fs::read_to_string(path).map_err(io_context(path))?;
        Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
    }
}

/// Observed rows of a table as a matrix, plus the missing-row mask.
fn observed_matrix(table: &AttributeTable) -> (DMatrix<f64>, Vec<bool>) {
    let observed: Vec<[f64; 4]> = table.observed().map(|(_, v)| v).collect();
    let data = DMatrix::from_fn(observed.len(), 4, |i, j| observed[i][j]);
    (data, table.missing_mask())
}

/// Seeded subsample of `n` row indices, returned in ascending order.
fn subsample(n: usize, keep: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if n <= keep {
        return idx;
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(keep);
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub train_rows: usize,
    pub initial_log_likelihood: f64,
    pub trace: Vec<f64>,
    pub converged: bool,
}

pub fn cmd_train(config: &PipelineConfig) -> Result<TrainSummary, PipelineError> {
    let stage = Stage::Train;
    let out = Artifacts::new(&config.output_dir);
    let header = read_header(&config.input).in_stage(stage)?;
    let table = AttributeTable::read_csv(&out.filled_csv(), header).in_stage(stage)?;
    let (mut data, _) = observed_matrix(&table);
    let standardization = Standardization::fit(&data).map_err(|m| stage_error(stage, m))?;
    standardization.apply(&mut data);

    let keep = subsample(data.nrows(), config.gtm.max_train_rows, config.gtm.seed);
    let train_data = if keep.len() == data.nrows() {
        data
    } else {
        data.select_rows(&keep)
    };
    let outcome = train(&train_data, &config.gtm).in_stage(stage)?;

    let file = ModelFile {
        geometry: header,
        settings: config.gtm.clone(),
        standardization,
        train_rows: train_data.nrows(),
        initial_log_likelihood: outcome.initial_log_likelihood,
        iterations: outcome.trace.len(),
        converged: outcome.converged,
        parameters: GtmParameters::from(&outcome.model),
    };
    let json = serde_json::to_string_pretty(&file).expect("model serializes");
    let model_path = out.model_json();
    fs::write(&model_path, json + "\n")
        .map_err(io_context(&model_path))
        .in_stage(stage)?;

    let mut trace = String::from("iteration,log_likelihood\n");
    for (i, ll) in outcome.trace.iter().enumerate() {
        trace.push_str(&format!("{},{}\n", i + 1, ll));
    }
    let trace_path = out.trace_csv();
    fs::write(&trace_path, trace)
        .map_err(io_context(&trace_path))
        .in_stage(stage)?;

    Ok(TrainSummary {
        train_rows: train_data.nrows(),
        initial_log_likelihood: outcome.initial_log_likelihood,
        trace: outcome.trace,
        converged: outcome.converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifySummary {
    pub clusters: ClusterModel,
    /// Agreement with the ground truth over voxels labeled in both maps.
    pub ari: Option<f64>,
}

/// ARI restricted to voxels that carry a label in both maps.
pub fn map_agreement(a: &FaciesMap, b: &FaciesMap) -> Result<f64, crate::facies::FaciesError> {
    let (x, y): (Vec<u32>, Vec<u32>) = a
        .labels()
        .iter()
        .zip(b.labels())
        .filter(|(&p, &q)| p != 0 && q != 0)
        .map(|(&p, &q)| (p, q))
        .unzip();
    adjusted_rand_index(&x, &y)
}

pub fn cmd_classify(config: &PipelineConfig) -> Result<ClassifySummary, PipelineError> {
    let stage = Stage::Classify;
    let out = Artifacts::new(&config.output_dir);
    let header = read_header(&config.input).in_stage(stage)?;
    let file = ModelFile::load(&out.model_json())
        .map_err(|source| PipelineError::Stage { stage, source })?;
    if file.geometry != header {
        return Err(stage_error(
            stage,
            format!(
                "model was trained on {:?} but the input volume is {:?}",
                file.geometry.dims(),
                header.dims()
            ),
        ));
    }
    let model = GtmModel::try_from(&file.parameters).in_stage(stage)?;
    let table = AttributeTable::read_csv(&out.filled_csv(), header).in_stage(stage)?;
    let (mut data, mask) = observed_matrix(&table);
    if data.ncols() != file.standardization.mean.len() {
        return Err(stage_error(
            stage,
            "table and model disagree on the attribute count".into(),
        ));
    }
    file.standardization.apply(&mut data);

    let (means, _) = model.project(&data).in_stage(stage)?;
    let (clusters, labels) = cluster_latent(
        &means,
        config.classify.facies as usize,
        config.classify.seed,
    )
    .in_stage(stage)?;
    let map = assemble_map(&labels, &mask, header, config.classify.facies).in_stage(stage)?;
    map.write_csv(&out.facies_csv()).in_stage(stage)?;
    map.save_volume(&out.facies_volume()).in_stage(stage)?;

    let ari = match &config.ground_truth {
        Some(gt) => {
            let truth = FaciesMap::read_csv(gt, header).in_stage(stage)?;
            Some(map_agreement(&map, &truth).in_stage(stage)?)
        }
        None => None,
    };
    Ok(ClassifySummary { clusters, ari })
}

/// Draws the facies slice and legend when a facies map exists, and the
/// interpolated attribute slices when a filled table exists.
pub fn cmd_render(config: &PipelineConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let stage = Stage::Render;
    let out = Artifacts::new(&config.output_dir);
    let header = read_header(&config.input).in_stage(stage)?;
    let mut written = Vec::new();

    if out.facies_csv().exists() {
        let map = FaciesMap::read_csv(&out.facies_csv(), header).in_stage(stage)?;
        let slice = slice_of(&header, map.labels().to_vec(), &config.render, stage)?;
        render_labels(slice.view(), &config.render.palette)
            .in_stage(stage)?
            .write_ppm(&out.facies_image())
            .in_stage(stage)?;
        let n = map.n_facies().max(config.classify.facies);
        write_legend(&out.legend_svg(), n, &config.render.palette).in_stage(stage)?;
        written.extend([out.facies_image(), out.legend_svg()]);
    }
    if out.filled_csv().exists() {
        let table = AttributeTable::read_csv(&out.filled_csv(), header).in_stage(stage)?;
        render_attribute_slices(&table, &config.render, stage, |n| out.filled_image(n))?;
        written.extend(ATTRIBUTE_NAMES.iter().map(|n| out.filled_image(n)));
    }
    if written.is_empty() {
        return Err(stage_error(
            stage,
            format!(
                "nothing to render: neither {} nor {} exists",
                out.facies_csv().display(),
                out.filled_csv().display()
            ),
        ));
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub report: InterpolationReport,
    pub train: TrainSummary,
    pub classify: ClassifySummary,
    pub rendered: Vec<PathBuf>,
}

/// attributes -> interpolate -> train -> classify -> render, stopping at
/// the first failure. Progress lines go to `log`.
pub fn cmd_pipeline(
    config: &PipelineConfig,
    log: &mut dyn Write,
) -> Result<PipelineSummary, PipelineError> {
    let mut note = |msg: String| {
        let _ = writeln!(log, "{msg}");
    };
    let table = cmd_attributes(config)?;
    note(format!(
        "attributes: {} rows, {} missing",
        table.rows().len(),
        table.missing_count()
    ));
    let report = cmd_interpolate(config)?;
    for a in &report.attributes {
        note(format!(
            "interpolate: {} train rmse {:.3e}, test rmse {:?}",
            a.attribute, a.training_rmse, a.testing_rmse
        ));
    }
    let train = cmd_train(config)?;
    note(format!(
        "train: {} rows, {} iterations, final log-likelihood {:.6e}",
        train.train_rows,
        train.trace.len(),
        train
            .trace
            .last()
            .copied()
            .unwrap_or(train.initial_log_likelihood)
    ));
    let classify = cmd_classify(config)?;
    if let Some(ari) = classify.ari {
        note(format!("classify: ARI {ari:.4}"));
    }
    let rendered = cmd_render(config)?;
    note(format!("render: {} files", rendered.len()));
    Ok(PipelineSummary {
        report,
        train,
        classify,
        rendered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_is_sorted_and_seeded() {
        assert_eq!(subsample(5, 10, 1), vec![0, 1, 2, 3, 4]);
        let a = subsample(100, 10, 3);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, subsample(100, 10, 3));
        assert_ne!(a, subsample(100, 10, 4));
    }

    #[test]
    fn standardization_zero_mean_unit_variance() {
        let mut data = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 50.0]);
        let s = Standardization::fit(&data).unwrap();
        s.apply(&mut data);
        for col in data.column_iter() {
            let m = col.iter().sum::<f64>() / 4.0;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
        let flat = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        assert!(Standardization::fit(&flat).unwrap_err().contains("energy"));
    }

    #[test]
    fn default_slice_is_mid_axis() {
        let h = VolumeHeader::with_dims(10, 6, 8);
        let r = RenderSettings::default();
        assert_eq!(slice_index(&h, &r), h.time_at(4) as i64);
        let r = RenderSettings {
            orientation: Orientation::Crossline,
            ..Default::default()
        };
        assert_eq!(slice_index(&h, &r), h.crossline_at(3));
    }
}
