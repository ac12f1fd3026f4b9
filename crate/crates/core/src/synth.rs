//! Synthetic volumes built from box-shaped regions with known textures, used
//! as labeled stand-ins for field data.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::facies::FaciesMap;
use crate::volume::{AxisRange, SeismicVolume, VolumeError, VolumeHeader};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientAxis {
    Inline,
    Crossline,
    Z,
}

/// Amplitude pattern filling one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TextureRecipe {
    Constant {
        value: f64,
    },
    /// `mean +- amplitude` in square blocks of `period` samples over the
    /// inline x crossline plane.
    Checkerboard {
        period: usize,
        amplitude: f64,
        #[serde(default)]
        mean: f64,
    },
    WhiteNoise {
        sigma: f64,
        #[serde(default)]
        mean: f64,
    },
    /// Linear ramp from `from` at the region's low edge to `to` at its high
    /// edge along `axis`.
    LinearGradient {
        from: f64,
        to: f64,
        axis: GradientAxis,
    },
}

/// Region bounds are inclusive header coordinates: line numbers for inline
/// and crossline, milliseconds for z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub inline: AxisRange,
    pub crossline: AxisRange,
    pub z: AxisRange,
    pub recipe: TextureRecipe,
}

/// A header plus regions that tile it exactly. Region `n` gets label `n + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLayout {
    pub header: VolumeHeader,
    pub regions: Vec<Region>,
}

impl SyntheticLayout {
    /// Four lateral quadrants over the full time range: constant,
    /// checkerboard, white noise and an inline gradient.
    pub fn quadrants(n_inline: usize, n_crossline: usize, n_samples: usize) -> Self {
        let header = VolumeHeader::with_dims(n_inline, n_crossline, n_samples);
        let (hi_i, hi_x, hi_z) = (
            n_inline as i64 - 1,
            n_crossline as i64 - 1,
            n_samples as i64 - 1,
        );
        let (mid_i, mid_x) = (n_inline as i64 / 2, n_crossline as i64 / 2);
        let z = AxisRange(0, hi_z);
        let regions = vec![
            Region {
                inline: AxisRange(0, mid_i - 1),
                crossline: AxisRange(0, mid_x - 1),
                z,
                recipe: TextureRecipe::Constant { value: 0.0 },
            },
            Region {
                inline: AxisRange(0, mid_i - 1),
                crossline: AxisRange(mid_x, hi_x),
                z,
                recipe: TextureRecipe::Checkerboard {
                    period: 1,
                    amplitude: 1.0,
                    mean: 0.0,
                },
            },
            Region {
                inline: AxisRange(mid_i, hi_i),
                crossline: AxisRange(0, mid_x - 1),
                z,
                recipe: TextureRecipe::WhiteNoise {
                    sigma: 0.35,
                    mean: 0.0,
                },
            },
            Region {
                inline: AxisRange(mid_i, hi_i),
                crossline: AxisRange(mid_x, hi_x),
                z,
                recipe: TextureRecipe::LinearGradient {
                    from: -1.0,
                    to: 1.0,
                    axis: GradientAxis::Inline,
                },
            },
        ];
        Self { header, regions }
    }

    /// Index-space box `[lo, hi]` per axis for a region.
    fn index_box(&self, r: &Region) -> Result<[(usize, usize); 3], VolumeError> {
        let h = &self.header;
        let bad = |axis: &str, range: AxisRange| {
            VolumeError::Layout(format!(
                "{axis} range [{}, {}] does not fit the header",
                range.0, range.1
            ))
        };
        if r.inline.0 > r.inline.1
            || !h.inline_range.contains(r.inline.0)
            || !h.inline_range.contains(r.inline.1)
        {
            return Err(bad("inline", r.inline));
        }
        if r.crossline.0 > r.crossline.1
            || !h.crossline_range.contains(r.crossline.0)
            || !h.crossline_range.contains(r.crossline.1)
        {
            return Err(bad("crossline", r.crossline));
        }
        if r.z.0 > r.z.1 || !h.z_range.contains(r.z.0) || !h.z_range.contains(r.z.1) {
            return Err(bad("z", r.z));
        }
        let t0 = h.z_range.lo() as f64;
        let dt = h.sample_interval_ms;
        let z_lo = ((r.z.0 as f64 - t0) / dt - 1e-9).ceil().max(0.0) as usize;
        let z_hi = (((r.z.1 as f64 - t0) / dt + 1e-9).floor() as usize).min(h.n_samples() - 1);
        if z_lo > z_hi {
            return Err(bad("z", r.z));
        }
        Ok([
            (
                (r.inline.0 - h.inline_range.lo()) as usize,
                (r.inline.1 - h.inline_range.lo()) as usize,
            ),
            (
                (r.crossline.0 - h.crossline_range.lo()) as usize,
                (r.crossline.1 - h.crossline_range.lo()) as usize,
            ),
            (z_lo, z_hi),
        ])
    }
}

fn validate_recipe(recipe: &TextureRecipe) -> Result<(), VolumeError> {
    let finite = |v: f64, what: &str| {
        if v.is_finite() {
            Ok(())
        } else {
            Err(VolumeError::Layout(format!("{what} must be finite")))
        }
    };
    match *recipe {
        TextureRecipe::Constant { value } => finite(value, "constant value"),
        TextureRecipe::Checkerboard {
            period,
            amplitude,
            mean,
        } => {
            if period == 0 {
                return Err(VolumeError::Layout(
                    "checkerboard period must be >= 1".into(),
                ));
            }
            finite(amplitude, "checkerboard amplitude")?;
            finite(mean, "checkerboard mean")
        }
        TextureRecipe::WhiteNoise { sigma, mean } => {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(VolumeError::Layout(
                    "noise sigma must be finite and >= 0".into(),
                ));
            }
            finite(mean, "noise mean")
        }
        TextureRecipe::LinearGradient { from, to, .. } => {
            finite(from, "gradient start")?;
            finite(to, "gradient end")
        }
    }
}

/// Renders the layout into a volume plus its ground-truth label map. Noise is
/// drawn region by region in voxel order from a generator seeded by `seed`,
/// so the output is a pure function of `(layout, seed)`.
pub fn generate_synthetic(
    layout: &SyntheticLayout,
    seed: u64,
) -> Result<(SeismicVolume, FaciesMap), VolumeError> {
    layout.header.validate()?;
    if layout.regions.is_empty() {
        return Err(VolumeError::Layout("no regions".into()));
    }
    let dims = layout.header.dims();
    let mut labels = Array3::<u32>::zeros(dims);
    let mut boxes = Vec::with_capacity(layout.regions.len());
    for (n, region) in layout.regions.iter().enumerate() {
        validate_recipe(&region.recipe)?;
        let b = layout.index_box(region)?;
        for i in b[0].0..=b[0].1 {
            for j in b[1].0..=b[1].1 {
                for k in b[2].0..=b[2].1 {
                    let cell = &mut labels[[i, j, k]];
                    if *cell != 0 {
                        return Err(VolumeError::Layout(format!(
                            "regions {} and {} overlap at index ({i}, {j}, {k})",
                            *cell,
                            n + 1
                        )));
                    }
                    *cell = n as u32 + 1;
                }
            }
        }
        boxes.push(b);
    }
    if let Some(((i, j, k), _)) = labels.indexed_iter().find(|(_, &l)| l == 0) {
        return Err(VolumeError::Layout(format!(
            "voxel ({i}, {j}, {k}) is not covered by any region"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Array3::<f32>::zeros(dims);
    for (region, b) in layout.regions.iter().zip(&boxes) {
        let noise = match region.recipe {
            TextureRecipe::WhiteNoise { sigma, mean } => {
                Some(Normal::new(mean, sigma).expect("validated sigma"))
            }
            _ => None,
        };
        for i in b[0].0..=b[0].1 {
            for j in b[1].0..=b[1].1 {
                for k in b[2].0..=b[2].1 {
                    let v = match region.recipe {
                        TextureRecipe::Constant { value } => value,
                        TextureRecipe::Checkerboard {
                            period,
                            amplitude,
                            mean,
                        } => {
                            let parity = (i / period + j / period) % 2;
                            if parity == 0 {
                                mean + amplitude
                            } else {
                                mean - amplitude
                            }
                        }
                        TextureRecipe::WhiteNoise { .. } => {
                            noise.as_ref().expect("noise recipe").sample(&mut rng)
                        }
                        TextureRecipe::LinearGradient { from, to, axis } => {
                            let (pos, lo, hi) = match axis {
                                GradientAxis::Inline => (i, b[0].0, b[0].1),
                                GradientAxis::Crossline => (j, b[1].0, b[1].1),
                                GradientAxis::Z => (k, b[2].0, b[2].1),
                            };
                            let t = if hi > lo {
                                (pos - lo) as f64 / (hi - lo) as f64
                            } else {
                                0.0
                            };
                            from + t * (to - from)
                        }
                    };
                    samples[[i, j, k]] = v as f32;
                }
            }
        }
    }

    let n_facies = layout.regions.len() as u32;
    let volume = SeismicVolume::new(layout.header, samples)?;
    let map = FaciesMap::new(layout.header, labels.into_iter().collect(), n_facies)
        .map_err(|e| VolumeError::Layout(e.to_string()))?;
    Ok((volume, map))
}
