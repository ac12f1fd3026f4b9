//! Gray-level co-occurrence matrices and the four texture attributes derived
//! from them: contrast, energy, homogeneity and dissimilarity.
//!
//! Windows are quantized against fixed amplitude bounds (the global volume
//! range when run over a volume), pairs are accumulated symmetrically, and
//! per-offset attributes are averaged.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{AttributeTable, TextureVector};
use crate::volume::SeismicVolume;

pub const DEFAULT_LEVELS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum GlcmError {
    #[error("gray-level count must be at least 2, got {0}")]
    TooFewLevels(usize),
    #[error("non-finite value {value} at window cell ({row}, {col})")]
    NonFinite { value: f64, row: usize, col: usize },
    #[error("offset ({0}, {1}) is zero")]
    ZeroOffset(isize, isize),
    #[error("{rows}x{cols} window has no pixel pair at offset ({di}, {dj})")]
    WindowTooSmall {
        rows: usize,
        cols: usize,
        di: isize,
        dj: isize,
    },
    #[error("invalid texture settings: {0}")]
    Settings(String),
}

/// A window of integer gray levels in `[0, levels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWindow {
    levels: usize,
    cells: Array2<u16>,
    bounds: (f64, f64),
}

impl QuantizedWindow {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn cells(&self) -> &Array2<u16> {
        &self.cells
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }
}

/// Linear binning of one amplitude. A degenerate range puts everything in
/// level 0; values outside the bounds clamp to the end levels.
#[inline]
pub fn quantize_value(v: f64, lo: f64, hi: f64, levels: usize) -> u16 {
    if !(hi > lo) {
        return 0;
    }
    let t = ((v - lo) / (hi - lo) * levels as f64).floor();
    t.clamp(0.0, (levels - 1) as f64) as u16
}

pub fn quantize(
    window: ArrayView2<'_, f64>,
    levels: usize,
    bounds: Option<(f64, f64)>,
) -> Result<QuantizedWindow, GlcmError> {
    if levels < 2 {
        return Err(GlcmError::TooFewLevels(levels));
    }
    if levels > u16::MAX as usize {
        return Err(GlcmError::Settings(format!(
            "{levels} gray levels do not fit in 16 bits"
        )));
    }
    if let Some(((row, col), &value)) = window.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(GlcmError::NonFinite { value, row, col });
    }
    let bounds = bounds.unwrap_or_else(|| {
        window
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    });
    let cells = window.mapv(|v| quantize_value(v, bounds.0, bounds.1, levels));
    Ok(QuantizedWindow {
        levels,
        cells,
        bounds,
    })
}

/// Normalized symmetric co-occurrence probabilities `p[i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlcMatrix {
    levels: usize,
    p: Array2<f64>,
}

impl GlcMatrix {
    /// Wraps an existing probability matrix. Used for analytic checks; no
    /// normalization is applied.
    pub fn from_probabilities(p: Array2<f64>) -> Self {
        assert_eq!(p.nrows(), p.ncols(), "co-occurrence matrix must be square");
        Self {
            levels: p.nrows(),
            p,
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn p(&self) -> &Array2<f64> {
        &self.p
    }

    fn weighted_sum(&self, weight: impl Fn(usize, usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for ((i, j), &p) in self.p.indexed_iter() {
            acc += p * weight(i, j);
        }
        acc
    }

    pub fn contrast(&self) -> f64 {
        self.weighted_sum(|i, j| {
            let d = i as f64 - j as f64;
            d * d
        })
    }

    pub fn energy(&self) -> f64 {
        self.p.iter().map(|p| p * p).sum::<f64>().sqrt()
    }

    pub fn homogeneity(&self) -> f64 {
        self.weighted_sum(|i, j| {
            let d = i as f64 - j as f64;
            1.0 / (1.0 + d * d)
        })
    }

    pub fn dissimilarity(&self) -> f64 {
        self.weighted_sum(|i, j| (i as f64 - j as f64).abs())
    }

    pub fn texture(&self) -> TextureVector {
        TextureVector {
            energy: self.energy(),
            homogeneity: self.homogeneity(),
            contrast: self.contrast(),
            dissimilarity: self.dissimilarity(),
        }
    }
}

fn check_offset(rows: usize, cols: usize, (di, dj): (isize, isize)) -> Result<(), GlcmError> {
    if di == 0 && dj == 0 {
        return Err(GlcmError::ZeroOffset(di, dj));
    }
    if di.unsigned_abs() >= rows || dj.unsigned_abs() >= cols {
        return Err(GlcmError::WindowTooSmall { rows, cols, di, dj });
    }
    Ok(())
}

/// Visits every in-window pair `(a, a + offset)`.
fn for_each_pair(
    cells: ArrayView2<'_, u16>,
    (di, dj): (isize, isize),
    mut f: impl FnMut(u16, u16),
) {
    let (rows, cols) = cells.dim();
    let r0 = (-di).max(0) as usize;
    let r1 = (rows as isize - di.max(0)) as usize;
    let c0 = (-dj).max(0) as usize;
    let c1 = (cols as isize - dj.max(0)) as usize;
    for r in r0..r1 {
        let r2 = (r as isize + di) as usize;
        for c in c0..c1 {
            let c2 = (c as isize + dj) as usize;
            f(cells[[r, c]], cells[[r2, c2]]);
        }
    }
}

pub fn cooccurrence(q: &QuantizedWindow, offset: (isize, isize)) -> Result<GlcMatrix, GlcmError> {
    let (rows, cols) = q.cells.dim();
    check_offset(rows, cols, offset)?;
    let n = q.levels;
    let mut counts = Array2::<u64>::zeros((n, n));
    let mut pairs = 0u64;
    for_each_pair(q.cells.view(), offset, |a, b| {
        counts[[a as usize, b as usize]] += 1;
        counts[[b as usize, a as usize]] += 1;
        pairs += 1;
    });
    let total = (2 * pairs) as f64;
    Ok(GlcMatrix {
        levels: n,
        p: counts.mapv(|c| c as f64 / total),
    })
}

/// Attributes of one window averaged over `offsets`.
///
/// Only occupied cells are visited, in row-major order, so the sums are
/// bit-identical to summing the dense matrix.
pub fn window_texture(
    cells: ArrayView2<'_, u16>,
    levels: usize,
    offsets: &[(isize, isize)],
) -> Result<TextureVector, GlcmError> {
    if offsets.is_empty() {
        return Err(GlcmError::Settings("offset list is empty".into()));
    }
    let (rows, cols) = cells.dim();
    let mut keys: Vec<u32> = Vec::with_capacity(2 * rows * cols);
    let mut sum = [0.0f64; 4];
    for &offset in offsets {
        check_offset(rows, cols, offset)?;
        keys.clear();
        for_each_pair(cells, offset, |a, b| {
            keys.push(a as u32 * levels as u32 + b as u32);
            keys.push(b as u32 * levels as u32 + a as u32);
        });
        keys.sort_unstable();
        let total = keys.len() as f64;
        let (mut contrast, mut energy_sq, mut homogeneity, mut dissimilarity) =
            (0.0, 0.0, 0.0, 0.0);
        for run in keys.chunk_by(|a, b| a == b) {
            let p = run.len() as f64 / total;
            let i = (run[0] / levels as u32) as f64;
            let j = (run[0] % levels as u32) as f64;
            let d = i - j;
            contrast += p * (d * d);
            energy_sq += p * p;
            homogeneity += p * (1.0 / (1.0 + d * d));
            dissimilarity += p * d.abs();
        }
        sum[0] += energy_sq.sqrt();
        sum[1] += homogeneity;
        sum[2] += contrast;
        sum[3] += dissimilarity;
    }
    let n = offsets.len() as f64;
    Ok(TextureVector {
        energy: sum[0] / n,
        homogeneity: sum[1] / n,
        contrast: sum[2] / n,
        dissimilarity: sum[3] / n,
    })
}

/// Plane in which the sliding window is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowPlane {
    /// inline x crossline at fixed time (map view)
    #[default]
    Time,
    /// crossline x time at fixed inline
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureSettings {
    pub levels: usize,
    pub window_half: usize,
    pub offsets: Vec<(isize, isize)>,
    pub plane: WindowPlane,
}

impl Default for TextureSettings {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS,
            window_half: 4,
            offsets: vec![(0, 1), (1, 0), (1, 1), (1, -1)],
            plane: WindowPlane::Time,
        }
    }
}

impl TextureSettings {
    pub fn validate(&self) -> Result<(), GlcmError> {
        if self.levels < 2 {
            return Err(GlcmError::TooFewLevels(self.levels));
        }
        if self.levels > u16::MAX as usize {
            return Err(GlcmError::Settings(format!(
                "{} gray levels do not fit in 16 bits",
                self.levels
            )));
        }
        if self.window_half < 1 {
            return Err(GlcmError::Settings("window_half must be at least 1".into()));
        }
        if self.offsets.is_empty() {
            return Err(GlcmError::Settings("offset list is empty".into()));
        }
        let side = 2 * self.window_half + 1;
        for &offset in &self.offsets {
            check_offset(side, side, offset)?;
        }
        Ok(())
    }
}

const MISSING_LEVEL: u16 = u16::MAX;

/// Per-voxel texture attributes of a volume.
///
/// Voxels whose window leaves the volume or touches a missing sample become
/// missing rows. Rows are computed independently, so the result does not
/// depend on the thread count.
pub fn compute_attribute_table(
    volume: &SeismicVolume,
    settings: &TextureSettings,
) -> Result<AttributeTable, GlcmError> {
    settings.validate()?;
    let header = *volume.header();
    let (ni, nx, nz) = header.dims();
    let levels = settings.levels;
    let bounds = volume.amplitude_bounds();
    let quantized = volume.samples().mapv(|v| match bounds {
        Some((lo, hi)) if !v.is_nan() => quantize_value(v as f64, lo, hi, levels),
        _ => MISSING_LEVEL,
    });
    let h = settings.window_half;
    let side = 2 * h + 1;

    let rows: Vec<Option<TextureVector>> = (0..header.voxel_count())
        .into_par_iter()
        .map_init(
            || Array2::<u16>::zeros((side, side)),
            |window, idx| {
                let (i, j, k) = header.unflatten(idx);
                // (row axis position, row axis len, col axis position, col axis len)
                let (r, nr, c, nc) = match settings.plane {
                    WindowPlane::Time => (i, ni, j, nx),
                    WindowPlane::Inline => (j, nx, k, nz),
                };
                if r < h || c < h || r + h >= nr || c + h >= nc {
                    return None;
                }
                for a in 0..side {
                    for b in 0..side {
                        let (rr, cc) = (r + a - h, c + b - h);
                        let level = match settings.plane {
                            WindowPlane::Time => quantized[[rr, cc, k]],
                            WindowPlane::Inline => quantized[[i, rr, cc]],
                        };
                        if level == MISSING_LEVEL {
                            return None;
                        }
                        window[[a, b]] = level;
                    }
                }
                Some(
                    window_texture(window.view(), levels, &settings.offsets)
                        .expect("settings validated"),
                )
            },
        )
        .collect();
    Ok(AttributeTable::new(header, rows))
}
