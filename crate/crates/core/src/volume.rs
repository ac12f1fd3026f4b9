//! Seismic volumes, their survey header and the on-disk format.
//!
//! A volume is stored as a pair of files sharing a stem: `<stem>.json` holds
//! the survey header and `<stem>.f32` holds the raw samples as contiguous
//! little-endian IEEE-754 single precision values in (inline, crossline, z)
//! order with z varying fastest. Missing or dead samples are quiet NaNs.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed header {path}: {message}")]
    MalformedHeader { path: PathBuf, message: String },
    #[error("invalid header field `{field}`: {message}")]
    InvalidField {
        field: &'static str,
        message: String,
    },
    #[error("sample count mismatch: header declares {expected} samples, payload carries {actual}")]
    SizeMismatch { expected: usize, actual: String },
    #[error("non-finite sample {value} at index ({inline}, {crossline}, {z})")]
    NonFinite {
        value: f32,
        inline: usize,
        crossline: usize,
        z: usize,
    },
    #[error("{orientation} index {index} outside header range [{lo}, {hi}]")]
    IndexOutOfRange {
        orientation: Orientation,
        index: i64,
        lo: i64,
        hi: i64,
    },
    #[error("time index {index} ms does not fall on the {interval} ms sample grid")]
    OffGrid { index: i64, interval: f64 },
    #[error("invalid synthetic layout: {0}")]
    Layout(String),
}

/// Closed integer interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisRange(pub i64, pub i64);

impl AxisRange {
    pub fn lo(&self) -> i64 {
        self.0
    }

    pub fn hi(&self) -> i64 {
        self.1
    }

    pub fn contains(&self, v: i64) -> bool {
        self.0 <= v && v <= self.1
    }
}

/// Survey geometry shared by volumes, attribute tables and facies maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub inline_range: AxisRange,
    pub crossline_range: AxisRange,
    /// Two-way time in milliseconds.
    pub z_range: AxisRange,
    pub sample_interval_ms: f64,
    pub line_spacing_m: f64,
}

impl VolumeHeader {
    /// Header whose line numbers and times start at zero, one unit per sample.
    pub fn with_dims(n_inline: usize, n_crossline: usize, n_samples: usize) -> Self {
        Self {
            inline_range: AxisRange(0, n_inline as i64 - 1),
            crossline_range: AxisRange(0, n_crossline as i64 - 1),
            z_range: AxisRange(0, n_samples as i64 - 1),
            sample_interval_ms: 1.0,
            line_spacing_m: 25.0,
        }
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        let ranges = [
            ("inline_range", self.inline_range),
            ("crossline_range", self.crossline_range),
            ("z_range", self.z_range),
        ];
        for (field, r) in ranges {
            if r.lo() > r.hi() {
                return Err(VolumeError::InvalidField {
                    field,
                    message: format!("empty range [{}, {}]", r.lo(), r.hi()),
                });
            }
        }
        if !(self.sample_interval_ms.is_finite() && self.sample_interval_ms > 0.0) {
            return Err(VolumeError::InvalidField {
                field: "sample_interval_ms",
                message: format!("must be > 0, got {}", self.sample_interval_ms),
            });
        }
        if !(self.line_spacing_m.is_finite() && self.line_spacing_m > 0.0) {
            return Err(VolumeError::InvalidField {
                field: "line_spacing_m",
                message: format!("must be > 0, got {}", self.line_spacing_m),
            });
        }
        Ok(())
    }

    pub fn n_inline(&self) -> usize {
        (self.inline_range.hi() - self.inline_range.lo() + 1) as usize
    }

    pub fn n_crossline(&self) -> usize {
        (self.crossline_range.hi() - self.crossline_range.lo() + 1) as usize
    }

    pub fn n_samples(&self) -> usize {
        let span = (self.z_range.hi() - self.z_range.lo()) as f64;
        (span / self.sample_interval_ms + 1e-9).floor() as usize + 1
    }

    /// `(n_inline, n_crossline, n_samples)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_inline(), self.n_crossline(), self.n_samples())
    }

    pub fn voxel_count(&self) -> usize {
        self.n_inline() * self.n_crossline() * self.n_samples()
    }

    pub fn inline_at(&self, i: usize) -> i64 {
        self.inline_range.lo() + i as i64
    }

    pub fn crossline_at(&self, j: usize) -> i64 {
        self.crossline_range.lo() + j as i64
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.z_range.lo() as f64 + k as f64 * self.sample_interval_ms
    }

    /// Flat voxel index in (inline, crossline, z) order, z fastest.
    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_crossline() + j) * self.n_samples() + k
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn unflatten(&self, idx: usize) -> (usize, usize, usize) {
        let nz = self.n_samples();
        let nx = self.n_crossline();
        (idx / (nx * nz), (idx / nz) % nx, idx % nz)
    }

    /// Array index of a header coordinate along one orientation.
    pub fn axis_index(&self, orientation: Orientation, index: i64) -> Result<usize, VolumeError> {
        let range = match orientation {
            Orientation::Inline => self.inline_range,
            Orientation::Crossline => self.crossline_range,
            Orientation::Time => self.z_range,
        };
        if !range.contains(index) {
            return Err(VolumeError::IndexOutOfRange {
                orientation,
                index,
                lo: range.lo(),
                hi: range.hi(),
            });
        }
        let offset = (index - range.lo()) as f64;
        match orientation {
            Orientation::Time => {
                let k = offset / self.sample_interval_ms;
                if (k - k.round()).abs() > 1e-9 {
                    return Err(VolumeError::OffGrid {
                        index,
                        interval: self.sample_interval_ms,
                    });
                }
                let k = k.round() as usize;
                if k >= self.n_samples() {
                    return Err(VolumeError::IndexOutOfRange {
                        orientation,
                        index,
                        lo: range.lo(),
                        hi: range.hi(),
                    });
                }
                Ok(k)
            }
            _ => Ok(offset as usize),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Inline,
    Crossline,
    Time,
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Inline => "inline",
            Orientation::Crossline => "crossline",
            Orientation::Time => "time",
        })
    }
}

impl Orientation {
    pub(crate) fn axis(self) -> Axis {
        match self {
            Orientation::Inline => Axis(0),
            Orientation::Crossline => Axis(1),
            Orientation::Time => Axis(2),
        }
    }
}

/// Amplitude samples indexed `(inline, crossline, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeismicVolume {
    header: VolumeHeader,
    samples: Array3<f32>,
}

impl SeismicVolume {
    pub fn new(header: VolumeHeader, samples: Array3<f32>) -> Result<Self, VolumeError> {
        header.validate()?;
        let dims = header.dims();
        if samples.dim() != dims {
            return Err(VolumeError::SizeMismatch {
                expected: header.voxel_count(),
                actual: format!("{:?}", samples.dim()),
            });
        }
        for ((i, j, k), &v) in samples.indexed_iter() {
            if v.is_infinite() {
                return Err(VolumeError::NonFinite {
                    value: v,
                    inline: i,
                    crossline: j,
                    z: k,
                });
            }
        }
        Ok(Self {
            header,
            samples: samples.as_standard_layout().into_owned(),
        })
    }

    /// Builds a volume from samples laid out in payload order.
    pub fn from_flat(header: VolumeHeader, flat: Vec<f32>) -> Result<Self, VolumeError> {
        header.validate()?;
        if flat.len() != header.voxel_count() {
            return Err(VolumeError::SizeMismatch {
                expected: header.voxel_count(),
                actual: flat.len().to_string(),
            });
        }
        let samples =
            Array3::from_shape_vec(header.dims(), flat).expect("shape checked against header");
        Self::new(header, samples)
    }

    pub fn header(&self) -> &VolumeHeader {
        &self.header
    }

    pub fn samples(&self) -> &Array3<f32> {
        &self.samples
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.samples[[i, j, k]]
    }

    pub fn missing_count(&self) -> usize {
        self.samples.iter().filter(|v| v.is_nan()).count()
    }

    /// Minimum and maximum over non-missing samples, `None` if all are missing.
    pub fn amplitude_bounds(&self) -> Option<(f64, f64)> {
        let mut bounds: Option<(f64, f64)> = None;
        for &v in self.samples.iter().filter(|v| !v.is_nan()) {
            let v = v as f64;
            bounds = Some(match bounds {
                None => (v, v),
                Some((lo, hi)) => (lo.min(v), hi.max(v)),
            });
        }
        bounds
    }

    pub fn extract_slice(
        &self,
        orientation: Orientation,
        index: i64,
    ) -> Result<SliceView, VolumeError> {
        let pos = self.header.axis_index(orientation, index)?;
        let values = self.samples.index_axis(orientation.axis(), pos).to_owned();
        Ok(SliceView {
            orientation,
            index,
            values,
        })
    }
}

/// A 2-D section through a volume. Rows and columns are the two remaining
/// axes in (inline, crossline, z) order.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceView {
    pub orientation: Orientation,
    pub index: i64,
    pub values: Array2<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderFile {
    inline_range: AxisRange,
    crossline_range: AxisRange,
    z_range: AxisRange,
    sample_interval_ms: f64,
    line_spacing_m: f64,
    byte_order: String,
    sample_format: String,
}

/// Header and payload locations for a volume stem. A path ending in `.json`
/// or `.f32` names the same pair as the bare stem.
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("f32") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut header = stem.clone().into_os_string();
    header.push(".json");
    let mut payload = stem.into_os_string();
    payload.push(".f32");
    (header.into(), payload.into())
}

pub fn read_header(path: &Path) -> Result<VolumeHeader, VolumeError> {
    let (header_path, _) = volume_paths(path);
    let text = fs::read_to_string(&header_path).map_err(|source| VolumeError::Io {
        path: header_path.clone(),
        source,
    })?;
    let file: HeaderFile =
        serde_json::from_str(&text).map_err(|e| VolumeError::MalformedHeader {
            path: header_path.clone(),
            message: e.to_string(),
        })?;
    if file.byte_order != "LE" {
        return Err(VolumeError::InvalidField {
            field: "byte_order",
            message: format!("expected \"LE\", got {:?}", file.byte_order),
        });
    }
    if file.sample_format != "f32" {
        return Err(VolumeError::InvalidField {
            field: "sample_format",
            message: format!("expected \"f32\", got {:?}", file.sample_format),
        });
    }
    let header = VolumeHeader {
        inline_range: file.inline_range,
        crossline_range: file.crossline_range,
        z_range: file.z_range,
        sample_interval_ms: file.sample_interval_ms,
        line_spacing_m: file.line_spacing_m,
    };
    header.validate()?;
    Ok(header)
}

pub fn write_header(header: &VolumeHeader, path: &Path) -> Result<(), VolumeError> {
    header.validate()?;
    let (header_path, _) = volume_paths(path);
    let file = HeaderFile {
        inline_range: header.inline_range,
        crossline_range: header.crossline_range,
        z_range: header.z_range,
        sample_interval_ms: header.sample_interval_ms,
        line_spacing_m: header.line_spacing_m,
        byte_order: "LE".to_string(),
        sample_format: "f32".to_string(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("header serializes");
    text.push('\n');
    fs::write(&header_path, text).map_err(|source| VolumeError::Io {
        path: header_path,
        source,
    })
}

pub fn load_volume(path: &Path) -> Result<SeismicVolume, VolumeError> {
    let header = read_header(path)?;
    let (_, payload_path) = volume_paths(path);
    let bytes = fs::read(&payload_path).map_err(|source| VolumeError::Io {
        path: payload_path.clone(),
        source,
    })?;
    if bytes.len() % 4 != 0 {
        return Err(VolumeError::SizeMismatch {
            expected: header.voxel_count(),
            actual: format!("{} bytes (not a whole number of f32 samples)", bytes.len()),
        });
    }
    let flat: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    SeismicVolume::from_flat(header, flat)
}

pub fn save_volume(volume: &SeismicVolume, path: &Path) -> Result<(), VolumeError> {
    volume.header.validate()?;
    let (_, payload_path) = volume_paths(path);
    let mut bytes = Vec::with_capacity(volume.samples.len() * 4);
    for v in volume.samples.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&payload_path, bytes).map_err(|source| VolumeError::Io {
        path: payload_path,
        source,
    })?;
    write_header(&volume.header, path)
}
