//! Per-voxel texture attribute tables and their CSV form.

use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::VolumeHeader;

pub const ATTRIBUTE_NAMES: [&str; 4] = ["energy", "homogeneity", "contrast", "dissimilarity"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureVector {
    pub energy: f64,
    pub homogeneity: f64,
    pub contrast: f64,
    pub dissimilarity: f64,
}

impl TextureVector {
    pub fn to_array(self) -> [f64; 4] {
        [
            self.energy,
            self.homogeneity,
            self.contrast,
            self.dissimilarity,
        ]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            energy: a[0],
            homogeneity: a[1],
            contrast: a[2],
            dissimilarity: a[3],
        }
    }
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path} line {line}: {message}")]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: expected {expected} rows for the volume geometry, found {found}")]
    RowCount {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
}

/// Texture vectors for every voxel of a volume, `None` marking missing rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeTable {
    geometry: VolumeHeader,
    rows: Vec<Option<TextureVector>>,
}

impl AttributeTable {
    pub fn new(geometry: VolumeHeader, rows: Vec<Option<TextureVector>>) -> Self {
        assert_eq!(rows.len(), geometry.voxel_count(), "one row per voxel");
        Self { geometry, rows }
    }

    pub fn geometry(&self) -> &VolumeHeader {
        &self.geometry
    }

    pub fn rows(&self) -> &[Option<TextureVector>] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Option<TextureVector>> {
        self.rows
    }

    pub fn missing_mask(&self) -> Vec<bool> {
        self.rows.iter().map(Option::is_none).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_none()).count()
    }

    /// Observed rows as `(voxel index, attributes)` in voxel order.
    pub fn observed(&self) -> impl Iterator<Item = (usize, [f64; 4])> + '_ {
        self.rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.map(|t| (i, t.to_array())))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TableError> {
        let file = File::create(path).map_err(|source| TableError::Io {
            path: path.into(),
            source,
        })?;
        let csv_err = |source| TableError::Csv {
            path: path.into(),
            source,
        };
        let mut w = csv::Writer::from_writer(io::BufWriter::new(file));
        w.write_record([
            "inline",
            "crossline",
            "z",
            "energy",
            "homogeneity",
            "contrast",
            "dissimilarity",
            "missing",
        ])
        .map_err(csv_err)?;
        let g = &self.geometry;
        for (idx, row) in self.rows.iter().enumerate() {
            let (i, j, k) = g.unflatten(idx);
            let coords = [
                g.inline_at(i).to_string(),
                g.crossline_at(j).to_string(),
                g.time_at(k).to_string(),
            ];
            let values: [String; 5] = match row {
                Some(t) => [
                    t.energy.to_string(),
                    t.homogeneity.to_string(),
                    t.contrast.to_string(),
                    t.dissimilarity.to_string(),
                    "0".into(),
                ],
                None => [
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "1".into(),
                ],
            };
            w.write_record(coords.iter().chain(values.iter()))
                .map_err(csv_err)?;
        }
        w.flush().map_err(|source| TableError::Io {
            path: path.into(),
            source,
        })
    }

    /// Reads a table written by [`write_csv`](Self::write_csv). Every voxel of
    /// `geometry` must appear exactly once; row order is free.
    pub fn read_csv(path: &Path, geometry: VolumeHeader) -> Result<Self, TableError> {
        let file = File::open(path).map_err(|source| TableError::Io {
            path: path.into(),
            source,
        })?;
        let mut r = csv::Reader::from_reader(io::BufReader::new(file));
        let mut rows: Vec<Option<Option<TextureVector>>> = vec![None; geometry.voxel_count()];
        let mut found = 0usize;
        for record in r.records() {
            let record = record.map_err(|source| TableError::Csv {
                path: path.into(),
                source,
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let row_err = |message: String| TableError::Row {
                path: path.into(),
                line,
                message,
            };
            if record.len() != 8 {
                return Err(row_err(format!(
                    "expected 8 fields, found {}",
                    record.len()
                )));
            }
            let int = |i: usize| {
                record[i]
                    .parse::<i64>()
                    .map_err(|e| row_err(format!("field {i}: {e}")))
            };
            let float = |i: usize| {
                record[i]
                    .parse::<f64>()
                    .map_err(|e| row_err(format!("field {i}: {e}")))
            };
            let (il, xl, z) = (int(0)?, int(1)?, float(2)?);
            let idx = voxel_index(&geometry, il, xl, z)
                .ok_or_else(|| row_err(format!("coordinate ({il}, {xl}, {z}) outside geometry")))?;
            let value = match &record[7] {
                "1" => None,
                "0" => Some(TextureVector {
                    energy: float(3)?,
                    homogeneity: float(4)?,
                    contrast: float(5)?,
                    dissimilarity: float(6)?,
                }),
                other => {
                    return Err(row_err(format!(
                        "missing flag must be 0 or 1, got {other:?}"
                    )))
                }
            };
            if rows[idx].replace(value).is_some() {
                return Err(row_err(format!("duplicate coordinate ({il}, {xl}, {z})")));
            }
            found += 1;
        }
        if found != geometry.voxel_count() {
            return Err(TableError::RowCount {
                path: path.into(),
                expected: geometry.voxel_count(),
                found,
            });
        }
        Ok(Self::new(
            geometry,
            rows.into_iter()
                .map(|r| r.expect("all rows seen"))
                .collect(),
        ))
    }
}

/// Flat voxel index of header coordinates, `None` outside the geometry.
pub fn voxel_index(g: &VolumeHeader, inline: i64, crossline: i64, time: f64) -> Option<usize> {
    if !g.inline_range.contains(inline) || !g.crossline_range.contains(crossline) {
        return None;
    }
    let k = (time - g.z_range.lo() as f64) / g.sample_interval_ms;
    if !(k >= -1e-9) || (k - k.round()).abs() > 1e-6 {
        return None;
    }
    let k = k.round() as usize;
    if k >= g.n_samples() {
        return None;
    }
    let i = (inline - g.inline_range.lo()) as usize;
    let j = (crossline - g.crossline_range.lo()) as usize;
    Some(g.flat_index(i, j, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::AxisRange;

    fn table() -> AttributeTable {
        let mut g = VolumeHeader::with_dims(2, 3, 2);
        g.inline_range = AxisRange(100, 101);
        g.z_range = AxisRange(0, 4);
        g.sample_interval_ms = 4.0;
        let rows = (0..12)
            .map(|i| {
                (i % 5 != 0)
                    .then(|| TextureVector::from_array([0.1 * i as f64, 1.0 / 3.0, 7.0, i as f64]))
            })
            .collect();
        AttributeTable::new(g, rows)
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let t = table();
        let p = dir.path().join("a.csv");
        t.write_csv(&p).unwrap();
        let back = AttributeTable::read_csv(&p, *t.geometry()).unwrap();
        assert_eq!(back, t);
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "inline,crossline,z,energy,homogeneity,contrast,dissimilarity,missing"
        );
        assert_eq!(lines.next().unwrap(), "100,0,0,,,,,1");
        assert_eq!(
            lines.next().unwrap(),
            "100,0,4,0.1,0.3333333333333333,7,1,0"
        );
    }

    #[test]
    fn row_count_checked() {
        let dir = tempfile::tempdir().unwrap();
        let t = table();
        let p = dir.path().join("a.csv");
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let truncated: Vec<&str> = text.lines().take(5).collect();
        std::fs::write(&p, truncated.join("\n")).unwrap();
        assert!(matches!(
            AttributeTable::read_csv(&p, *t.geometry()),
            Err(TableError::RowCount {
                expected: 12,
                found: 4,
                ..
            })
        ));
    }

    #[test]
    fn foreign_coordinates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = table();
        let p = dir.path().join("a.csv");
        t.write_csv(&p).unwrap();
        let mut other = *t.geometry();
        other.inline_range = AxisRange(200, 201);
        assert!(matches!(
            AttributeTable::read_csv(&p, other),
            Err(TableError::Row { .. })
        ));
    }
}
