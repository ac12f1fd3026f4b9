//! Facies labels: k-means over latent positions, per-voxel label maps and
//! agreement scoring against a reference labeling.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::voxel_index;
use crate::volume::{save_volume, SeismicVolume, VolumeError, VolumeHeader};

pub const MAX_LLOYD_ITERATIONS: usize = 100;

/// Label value for voxels that carry no facies.
pub const UNLABELED: u32 = 0;

#[derive(Debug, Error)]
pub enum FaciesError {
    #[error("cannot form {clusters} clusters from {points} points")]
    TooFewPoints { points: usize, clusters: usize },
    #[error("only {distinct} distinct points for {clusters} clusters")]
    TooFewDistinct { distinct: usize, clusters: usize },
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("projections contain non-finite values")]
    NonFinite,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("label {label} outside 1..={n_facies}")]
    LabelRange { label: u32, n_facies: u32 },
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// `C` centroids, index `c` belonging to label `c + 1`.
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    pub inertia: f64,
    /// Inertia after every assignment step, starting from the seeded centroids.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let nearest: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, centroids)).collect();
    let inertia = nearest.iter().map(|&(_, d)| d).sum();
    (nearest.into_iter().map(|(c, _)| c).collect(), inertia)
}

/// Cluster means accumulated in point order; empty clusters keep their centroid.
fn update(points: &[Vec<f64>], labels: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; previous.len()];
    let mut counts = vec![0usize; previous.len()];
    for (p, &c) in points.iter().zip(labels) {
        counts[c] += 1;
        sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((s, n), prev)| {
            if n == 0 {
                prev.clone()
            } else {
                s.into_iter().map(|v| v / n as f64).collect()
            }
        })
        .collect()
}

/// Seeded furthest-point initialization: a random first centroid, then
/// repeatedly the point furthest from all chosen centroids.
fn furthest_point_seeds(
    points: &[Vec<f64>],
    clusters: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, FaciesError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..points.len());
    let mut centroids = vec![points[first].clone()];
    let mut min_dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < clusters {
        let (idx, &far) = min_dist
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
        if far <= 0.0 {
            return Err(FaciesError::TooFewDistinct {
                distinct: centroids.len(),
                clusters,
            });
        }
        centroids.push(points[idx].clone());
        for (d, p) in min_dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[idx]));
        }
    }
    Ok(centroids)
}

/// k-means over rows of `projections`. Labels run `1..=C`, numbered by
/// decreasing cluster size (ties by first-found cluster).
pub fn cluster_latent(
    projections: &DMatrix<f64>,
    clusters: usize,
    seed: u64,
) -> Result<(ClusterModel, Vec<u32>), FaciesError> {
    if clusters == 0 {
        return Err(FaciesError::ZeroClusters);
    }
    let n = projections.nrows();
    if n < clusters {
        return Err(FaciesError::TooFewPoints {
            points: n,
            clusters,
        });
    }
    if projections.iter().any(|v| !v.is_finite()) {
        return Err(FaciesError::NonFinite);
    }
    let points: Vec<Vec<f64>> = projections
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();

    let mut centroids = furthest_point_seeds(&points, clusters, seed)?;
    let (mut labels, mut inertia) = assign(&points, &centroids);
    let mut trace = vec![inertia];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let updated = update(&points, &labels, &centroids);
        let (next, next_inertia) = assign(&points, &updated);
        centroids = updated;
        trace.push(next_inertia);
        inertia = next_inertia;
        let fixpoint = next == labels;
        labels = next;
        if fixpoint {
            break;
        }
    }

    let mut sizes = vec![0usize; clusters];
    for &c in &labels {
        sizes[c] += 1;
    }
    let mut order: Vec<usize> = (0..clusters).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut rank = vec![0u32; clusters];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r as u32 + 1;
    }
    let model = ClusterModel {
        centroids: order.iter().map(|&c| centroids[c].clone()).collect(),
        seed,
        inertia,
        inertia_trace: trace,
    };
    Ok((model, labels.into_iter().map(|c| rank[c]).collect()))
}

fn choose2(n: u64) -> f64 {
    (n as f64) * (n.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index between two labelings of the same items. Two trivial
/// partitions that agree score 1.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> Result<f64, FaciesError> {
    if a.len() != b.len() {
        return Err(FaciesError::LengthMismatch(format!(
            "{} vs {} labels",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(FaciesError::LengthMismatch(
            "need at least two labels".into(),
        ));
    }
    let mut table: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut rows: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cols: BTreeMap<u32, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| choose2(v)).sum();
    let expected = sum_a * sum_b / choose2(a.len() as u64);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Per-voxel facies labels, [`UNLABELED`] where no label was assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct FaciesMap {
    geometry: VolumeHeader,
    labels: Vec<u32>,
    n_facies: u32,
}

impl FaciesMap {
    pub fn new(
        geometry: VolumeHeader,
        labels: Vec<u32>,
        n_facies: u32,
    ) -> Result<Self, FaciesError> {
        if labels.len() != geometry.voxel_count() {
            return Err(FaciesError::LengthMismatch(format!(
                "{} labels for {} voxels",
                labels.len(),
                geometry.voxel_count()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l > n_facies) {
            return Err(FaciesError::LabelRange { label, n_facies });
        }
        Ok(Self {
            geometry,
            labels,
            n_facies,
        })
    }

    pub fn geometry(&self) -> &VolumeHeader {
        &self.geometry
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_facies(&self) -> u32 {
        self.n_facies
    }

    pub fn label_at(&self, i: usize, j: usize, k: usize) -> u32 {
        self.labels[self.geometry.flat_index(i, j, k)]
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), FaciesError> {
        let io_err = |source| FaciesError::Io {
            path: path.into(),
            source,
        };
        let mut f = io::BufWriter::new(File::create(path).map_err(io_err)?);
        let g = &self.geometry;
        writeln!(f, "inline,crossline,z,label").map_err(io_err)?;
        for (idx, label) in self.labels.iter().enumerate() {
            let (i, j, k) = g.unflatten(idx);
            writeln!(
                f,
                "{},{},{},{}",
                g.inline_at(i),
                g.crossline_at(j),
                g.time_at(k),
                label
            )
            .map_err(io_err)?;
        }
        f.flush().map_err(io_err)
    }

    /// Reads a label CSV; voxels absent from the file stay unlabeled and the
    /// facies count is the largest label seen.
    pub fn read_csv(path: &Path, geometry: VolumeHeader) -> Result<Self, FaciesError> {
        let file = File::open(path).map_err(|source| FaciesError::Io {
            path: path.into(),
            source,
        })?;
        let parse_err = |message: String| FaciesError::Parse {
            path: path.into(),
            message,
        };
        let mut r = csv::Reader::from_reader(io::BufReader::new(file));
        let mut labels = vec![UNLABELED; geometry.voxel_count()];
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| parse_err(e.to_string()))?;
            if record.len() != 4 {
                return Err(parse_err(format!("row {}: expected 4 fields", line + 2)));
            }
            let field = |i: usize| -> Result<f64, FaciesError> {
                record[i]
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("row {}: {e}", line + 2)))
            };
            let (il, xl, z) = (field(0)? as i64, field(1)? as i64, field(2)?);
            let label: u32 = record[3]
                .parse()
                .map_err(|e| parse_err(format!("row {}: {e}", line + 2)))?;
            let idx = voxel_index(&geometry, il, xl, z).ok_or_else(|| {
                parse_err(format!("row {}: coordinate outside geometry", line + 2))
            })?;
            labels[idx] = label;
        }
        let n_facies = labels.iter().copied().max().unwrap_or(0);
        Self::new(geometry, labels, n_facies)
    }

    /// Labels as an f32 volume in the standard payload format.
    pub fn to_volume(&self) -> SeismicVolume {
        let flat = self.labels.iter().map(|&l| l as f32).collect();
        SeismicVolume::from_flat(self.geometry, flat).expect("labels match geometry")
    }

    pub fn save_volume(&self, path: &Path) -> Result<(), FaciesError> {
        Ok(save_volume(&self.to_volume(), path)?)
    }
}

/// Places labels of the unmasked voxels, in voxel order, into a full map.
pub fn assemble_map(
    labels: &[u32],
    mask: &[bool],
    geometry: VolumeHeader,
    n_facies: u32,
) -> Result<FaciesMap, FaciesError> {
    if mask.len() != geometry.voxel_count() {
        return Err(FaciesError::LengthMismatch(format!(
            "mask has {} entries for {} voxels",
            mask.len(),
            geometry.voxel_count()
        )));
    }
    let unmasked = mask.iter().filter(|m| !**m).count();
    if unmasked != labels.len() {
        return Err(FaciesError::LengthMismatch(format!(
            "{} labels for {unmasked} unmasked voxels",
            labels.len()
        )));
    }
    let mut it = labels.iter();
    let full = mask
        .iter()
        .map(|&m| {
            if m {
                UNLABELED
            } else {
                *it.next().expect("counted")
            }
        })
        .collect();
    FaciesMap::new(geometry, full, n_facies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_cluster_is_mean() {
        let p = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let (m, labels) = cluster_latent(&p, 1, 3).unwrap();
        assert!(labels.iter().all(|&l| l == 1));
        assert_eq!(m.centroids, vec![vec![0.5, 0.5]]);
    }

    fn blobs(seed: u64) -> (DMatrix<f64>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let centers = [(-0.7, -0.7), (0.7, -0.7), (-0.7, 0.7), (0.7, 0.7)];
        let sizes = [50, 80, 30, 65];
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for (c, (&(x, y), &s)) in centers.iter().zip(&sizes).enumerate() {
            for _ in 0..s {
                data.push(x + noise.sample(&mut rng));
                data.push(y + noise.sample(&mut rng));
                truth.push(c as u32);
            }
        }
        (DMatrix::from_row_slice(truth.len(), 2, &data), truth)
    }

    #[test]
    fn separated_blobs_recovered() {
        let (p, truth) = blobs(1);
        let (m, labels) = cluster_latent(&p, 4, 11).unwrap();
        assert_eq!(adjusted_rand_index(&labels, &truth).unwrap(), 1.0);
        // size ordering: 80, 65, 50, 30
        let count = |l| labels.iter().filter(|&&x| x == l).count();
        assert_eq!([count(1), count(2), count(3), count(4)], [80, 65, 50, 30]);
        assert!(m.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn clustering_is_deterministic() {
        let (p, _) = blobs(2);
        let a = cluster_latent(&p, 3, 5).unwrap();
        let b = cluster_latent(&p, 3, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clustering_errors() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        assert!(matches!(
            cluster_latent(&p, 3, 0),
            Err(FaciesError::TooFewPoints { .. })
        ));
        assert!(matches!(
            cluster_latent(&p, 0, 0),
            Err(FaciesError::ZeroClusters)
        ));
        let same = DMatrix::from_element(5, 2, 0.3);
        assert!(matches!(
            cluster_latent(&same, 2, 0),
            Err(FaciesError::TooFewDistinct { .. })
        ));
    }

    #[test]
    fn ari_hand_computed() {
        let a = [1, 1, 1, 2, 2, 2];
        let b = [1, 1, 2, 2, 3, 3];
        // contingency: (1,1)=2 (1,2)=1 (2,2)=1 (2,3)=2 -> index = 1 + 0 + 0 + 1 = 2
        // rows: 3,3 -> 3 + 3 = 6; cols: 2,2,2 -> 3; expected = 6*3/15 = 1.2
        // max = (6 + 3)/2 = 4.5; ari = (2 - 1.2)/(4.5 - 1.2)
        let expected = 0.8 / 3.3;
        assert!((adjusted_rand_index(&a, &b).unwrap() - expected).abs() < 1e-15);
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&a, &[7, 7, 7, 3, 3, 3]).unwrap(), 1.0);
        assert!(adjusted_rand_index(&a, &b[..5]).is_err());
    }

    #[test]
    fn assemble_places_by_mask() {
        let g = VolumeHeader::with_dims(2, 3, 2);
        let mask: Vec<bool> = (0..12).map(|i| i % 3 == 1).collect();
        let labels: Vec<u32> = (0..8).map(|i| i % 4 + 1).collect();
        let map = assemble_map(&labels, &mask, g, 4).unwrap();
        let mut next = 0;
        for idx in 0..12 {
            let (i, j, k) = g.unflatten(idx);
            if mask[idx] {
                assert_eq!(map.label_at(i, j, k), UNLABELED);
            } else {
                assert_eq!(map.label_at(i, j, k), labels[next]);
                next += 1;
            }
        }
        let all = assemble_map(&[], &[true; 12], g, 4).unwrap();
        assert!(all.labels().iter().all(|&l| l == UNLABELED));
        assert!(assemble_map(&labels[..7], &mask, g, 4).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = VolumeHeader::with_dims(2, 2, 3);
        g.sample_interval_ms = 2.0;
        g.z_range = crate::volume::AxisRange(10, 14);
        let map = FaciesMap::new(g, (0..12).map(|i| i % 4).collect(), 3).unwrap();
        let p = dir.path().join("f.csv");
        map.write_csv(&p).unwrap();
        assert_eq!(FaciesMap::read_csv(&p, g).unwrap(), map);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("inline,crossline,z,label\n0,0,10,0\n0,0,12,1\n"));
    }
}
