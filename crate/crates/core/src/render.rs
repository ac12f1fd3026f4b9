//! Raster output for slices: palette-colored facies and grayscale
//! attributes as binary PPM, plus an SVG legend.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use thiserror::Error;

/// Facies colors for labels 1..=8; larger labels wrap around.
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 159, 0],
    [86, 180, 233],
    [0, 158, 115],
    [240, 228, 66],
    [0, 114, 178],
    [213, 94, 0],
    [204, 121, 167],
    [153, 153, 153],
];

/// Color of unlabeled voxels and of missing attribute samples.
pub const BACKGROUND: [u8; 3] = [0, 0, 0];

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("empty slice")]
    Empty,
}

/// RGB image, rows top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Raster {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), RenderError> {
        fs::write(path, self.to_ppm()).map_err(|source| RenderError::Io {
            path: path.into(),
            source,
        })
    }
}

pub fn label_color(label: u32, palette: &[[u8; 3]; 8]) -> [u8; 3] {
    if label == 0 {
        BACKGROUND
    } else {
        palette[(label as usize - 1) % palette.len()]
    }
}

/// One pixel per cell; slice rows become image rows.
pub fn render_labels(
    labels: ArrayView2<'_, u32>,
    palette: &[[u8; 3]; 8],
) -> Result<Raster, RenderError> {
    let (height, width) = labels.dim();
    if height == 0 || width == 0 {
        return Err(RenderError::Empty);
    }
    let pixels = labels.iter().map(|&l| label_color(l, palette)).collect();
    Ok(Raster {
        width,
        height,
        pixels,
    })
}

/// Linear gray ramp from the slice minimum (black) to maximum (white).
/// A flat slice renders mid-gray; NaN cells render as [`BACKGROUND`].
pub fn render_grayscale(values: ArrayView2<'_, f32>) -> Result<Raster, RenderError> {
    let (height, width) = values.dim();
    if height == 0 || width == 0 {
        return Err(RenderError::Empty);
    }
    let (lo, hi) = values
        .iter()
        .filter(|v| !v.is_nan())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let pixels = values
        .iter()
        .map(|&v| {
            if v.is_nan() {
                return BACKGROUND;
            }
            let t = if hi > lo {
                (v as f64 - lo) / (hi - lo)
            } else {
                0.5
            };
            let g = (t * 255.0).round().clamp(0.0, 255.0) as u8;
            [g, g, g]
        })
        .collect();
    Ok(Raster {
        width,
        height,
        pixels,
    })
}

/// Swatch-and-name legend for labels `1..=n_facies`.
pub fn legend_svg(n_facies: u32, palette: &[[u8; 3]; 8]) -> String {
    let row_h = 24;
    let height = row_h * n_facies.max(1) as usize + 8;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="160" height="{height}" viewBox="0 0 160 {height}">"#
    );
    for label in 1..=n_facies {
        let [r, g, b] = label_color(label, palette);
        let y = 4 + (label as usize - 1) * row_h;
        let _ = writeln!(
            svg,
            r##"  <rect x="4" y="{y}" width="20" height="20" fill="#{r:02x}{g:02x}{b:02x}" stroke="black"/>"##
        );
        let _ = writeln!(
            svg,
            r#"  <text x="32" y="{}" font-family="sans-serif" font-size="14">facies {label}</text>"#,
            y + 15
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_legend(path: &Path, n_facies: u32, palette: &[[u8; 3]; 8]) -> Result<(), RenderError> {
    fs::write(path, legend_svg(n_facies, palette)).map_err(|source| RenderError::Io {
        path: path.into(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn two_by_two_palette() {
        let labels = array![[1u32, 2], [3, 4]];
        let r = render_labels(labels.view(), &PALETTE).unwrap();
        assert_eq!(r.pixel(0, 0), PALETTE[0]);
        assert_eq!(r.pixel(0, 1), PALETTE[1]);
        assert_eq!(r.pixel(1, 0), PALETTE[2]);
        assert_eq!(r.pixel(1, 1), PALETTE[3]);
        let ppm = r.to_ppm();
        assert!(ppm.starts_with(b"P6\n2 2\n255\n"));
        assert_eq!(ppm.len(), 11 + 12);
        assert_eq!(&ppm[11..14], &PALETTE[0]);
        assert_eq!(&ppm[20..23], &PALETTE[3]);
    }

    #[test]
    fn unlabeled_and_wraparound() {
        assert_eq!(label_color(0, &PALETTE), BACKGROUND);
        assert_eq!(label_color(9, &PALETTE), PALETTE[0]);
        assert!(!PALETTE.contains(&BACKGROUND));
    }

    #[test]
    fn constant_slice_is_mid_gray() {
        let r = render_grayscale(Array2::from_elem((3, 5), 7.5f32).view()).unwrap();
        assert_eq!((r.width, r.height), (5, 3));
        assert!(r.pixels.iter().all(|&p| p == [128, 128, 128]));
    }

    #[test]
    fn gray_ramp_endpoints() {
        let v = array![[0.0f32, 1.0], [2.0, f32::NAN]];
        let r = render_grayscale(v.view()).unwrap();
        assert_eq!(r.pixel(0, 0), [0, 0, 0]);
        assert_eq!(r.pixel(0, 1), [128, 128, 128]);
        assert_eq!(r.pixel(1, 0), [255, 255, 255]);
        assert_eq!(r.pixel(1, 1), BACKGROUND);
    }

    #[test]
    fn legend_lists_every_facies() {
        let svg = legend_svg(4, &PALETTE);
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("#e69f00"));
        assert!(svg.contains("facies 4"));
    }
}
