//! Grayscale images, gradient fields, patch grids, and per-patch gradient
//! distributions turned into R-CDT features.
//!
//! Coordinates: `x` runs along columns (width), `y` along rows (height).
//! A gradient vector is `(∂I/∂x, ∂I/∂y)` in intensity units per pixel.
//! Interior pixels use central differences `(I[x+1] − I[x−1]) / 2`; the first
//! and last row/column use the one-sided difference toward the interior.
//! The field is computed once over the whole image, so overlapping patches
//! see identical gradient values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::{discrete_rcdt, AngleGrid, Distribution2D, RcdtRepresentation};

pub const DEFAULT_CELL: usize = 4;
pub const DEFAULT_OVERLAP: usize = 2;
pub const DEFAULT_ANGLES: usize = 8;

/// Nonnegative real-valued image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: format!("{} pixels ({height}x{width})", height * width),
                found: format!("{} pixels", pixels.len()),
            });
        }
        if let Some(i) = pixels.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid(format!(
                "pixel ({}, {}) is {}; intensities must be finite and >= 0",
                i / width,
                i % width,
                pixels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Builds an image from `f(row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn max_value(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Per-pixel gradient vectors, same shape as the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    height: usize,
    width: usize,
    data: Vec<[f64; 2]>,
}

impl GradientField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 2] {
        self.data[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.data
    }
}

pub fn compute_gradient(img: &GrayImage) -> Result<GradientField> {
    let (h, w) = (img.height, img.width);
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!(
            "gradient needs an image of at least 2x2, got {h}x{w}"
        )));
    }
    let p = &img.pixels;
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        let row = &p[r * w..(r + 1) * w];
        for c in 0..w {
            let gx = if c == 0 {
                row[1] - row[0]
            } else if c == w - 1 {
                row[w - 1] - row[w - 2]
            } else {
                (row[c + 1] - row[c - 1]) / 2.0
            };
            let gy = if r == 0 {
                p[w + c] - p[c]
            } else if r == h - 1 {
                p[(h - 1) * w + c] - p[(h - 2) * w + c]
            } else {
                (p[(r + 1) * w + c] - p[(r - 1) * w + c]) / 2.0
            };
            data.push([gx, gy]);
        }
    }
    Ok(GradientField {
        height: h,
        width: w,
        data,
    })
}

/// Pixel-wise `ln(1 + p)`.
pub fn log_preprocess(img: &GrayImage) -> GrayImage {
    GrayImage {
        height: img.height,
        width: img.width,
        pixels: img.pixels.iter().map(|p| p.ln_1p()).collect(),
    }
}

/// Top-left corner of a `cell × cell` patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRect {
    pub row: usize,
    pub col: usize,
}

/// Which pixels of a patch contribute to its gradient distribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelSelection {
    /// Every pixel of the patch.
    #[default]
    All,
    /// Only pixels whose difference stencil (both axes) stays inside the
    /// patch, so the patch distribution depends on the patch's own pixels
    /// alone.
    StencilInterior,
}

/// Row-major grid of equal-size square patches with stride `cell − overlap`.
/// The last row and column of patches are anchored to the image edge, so
/// every patch holds exactly `cell²` pixels and the union covers the image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    height: usize,
    width: usize,
    cell: usize,
    overlap: usize,
    patches: Vec<PatchRect>,
}

fn anchors(len: usize, cell: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|&a| a + cell <= len)
        .collect();
    let last = len - cell;
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

pub fn build_patch_grid(
    height: usize,
    width: usize,
    cell: usize,
    overlap: usize,
) -> Result<PatchGrid> {
    if cell < 2 {
        return Err(Error::invalid(format!("cell must be >= 2, got {cell}")));
    }
    if overlap >= cell {
        return Err(Error::invalid(format!(
            "overlap {overlap} must be smaller than cell {cell}"
        )));
    }
    if height < cell || width < cell {
        return Err(Error::invalid(format!(
            "image {height}x{width} is smaller than one {cell}x{cell} cell"
        )));
    }
    let stride = cell - overlap;
    let rows = anchors(height, cell, stride);
    let cols = anchors(width, cell, stride);
    let patches = rows
        .iter()
        .flat_map(|&row| cols.iter().map(move |&col| PatchRect { row, col }))
        .collect();
    Ok(PatchGrid {
        height,
        width,
        cell,
        overlap,
        patches,
    })
}

impl PatchGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cell(&self) -> usize {
        self.cell
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn stride(&self) -> usize {
        self.cell - self.overlap
    }

    /// Number of patches `K`.
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[PatchRect] {
        &self.patches
    }

    pub fn patch(&self, k: usize) -> Result<PatchRect> {
        self.patches.get(k).copied().ok_or_else(|| {
            Error::invalid(format!("patch index {k} out of range (K = {})", self.len()))
        })
    }

    /// Points per patch `N_k` under full selection (always `cell²`).
    pub fn points_per_patch(&self) -> usize {
        self.cell * self.cell
    }

    /// Pixel coordinates of patch `k` in row-major order, filtered by
    /// `selection`.
    pub fn pixels(&self, k: usize, selection: PixelSelection) -> Result<Vec<(usize, usize)>> {
        let rect = self.patch(k)?;
        let inside = |v: usize, lo: usize, len: usize| {
            let hi = lo + self.cell;
            let (a, b) = stencil(v, len);
            a >= lo && b < hi
        };
        let mut out = Vec::with_capacity(self.cell * self.cell);
        for r in rect.row..rect.row + self.cell {
            for c in rect.col..rect.col + self.cell {
                let keep = match selection {
                    PixelSelection::All => true,
                    PixelSelection::StencilInterior => {
                        inside(r, rect.row, self.height) && inside(c, rect.col, self.width)
                    }
                };
                if keep {
                    out.push((r, c));
                }
            }
        }
        Ok(out)
    }
}

/// Lowest and highest index read by the difference at `v` along an axis of
/// length `len`.
fn stencil(v: usize, len: usize) -> (usize, usize) {
    if v == 0 {
        (0, 1)
    } else if v == len - 1 {
        (len - 2, len - 1)
    } else {
        (v - 1, v + 1)
    }
}

/// Gradient vectors of patch `k`, all pixels, row-major.
pub fn patch_distribution(f: &GradientField, grid: &PatchGrid, k: usize) -> Result<Distribution2D> {
    patch_distribution_with(f, grid, k, PixelSelection::All)
}

pub fn patch_distribution_with(
    f: &GradientField,
    grid: &PatchGrid,
    k: usize,
    selection: PixelSelection,
) -> Result<Distribution2D> {
    check_field_matches(f, grid)?;
    let points = grid
        .pixels(k, selection)?
        .into_iter()
        .map(|(r, c)| f.get(r, c))
        .collect();
    Distribution2D::new(points)
}

fn check_field_matches(f: &GradientField, grid: &PatchGrid) -> Result<()> {
    if f.height != grid.height || f.width != grid.width {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", grid.height, grid.width),
            found: format!("{}x{}", f.height, f.width),
        });
    }
    Ok(())
}

/// Everything that determines the shape and meaning of a feature vector.
/// A model only accepts features produced under an identical configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub height: usize,
    pub width: usize,
    pub cell: usize,
    pub overlap: usize,
    pub angles: usize,
    pub log_transform: bool,
    #[serde(default)]
    pub pixels: PixelSelection,
}

impl FeatureConfig {
    /// Defaults: cell 4, overlap 2, 8 angles, no log transform, all pixels.
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cell: DEFAULT_CELL,
            overlap: DEFAULT_OVERLAP,
            angles: DEFAULT_ANGLES,
            log_transform: false,
            pixels: PixelSelection::All,
        }
    }

    /// Human-readable list of fields that differ, empty when equal.
    pub fn diff(&self, other: &FeatureConfig) -> Vec<String> {
        let mut out = Vec::new();
        macro_rules! cmp {
            ($field:ident) => {
                if self.$field != other.$field {
                    out.push(format!(
                        "{}: {:?} vs {:?}",
                        stringify!($field),
                        self.$field,
                        other.$field
                    ));
                }
            };
        }
        cmp!(height);
        cmp!(width);
        cmp!(cell);
        cmp!(overlap);
        cmp!(angles);
        cmp!(log_transform);
        cmp!(pixels);
        out
    }
}

/// Per-patch R-CDT features of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    config: FeatureConfig,
    patches: Vec<RcdtRepresentation>,
}

impl FeatureSet {
    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn patches(&self) -> &[RcdtRepresentation] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Precomputed patch grid, angle grid and pixel lists for one
/// [`FeatureConfig`]; reusable across images of the configured size.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    grid: PatchGrid,
    angles: AngleGrid,
    // Flat pixel indices per patch.
    pixel_lists: Vec<Vec<usize>>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        let grid = build_patch_grid(config.height, config.width, config.cell, config.overlap)?;
        let angles = AngleGrid::new(config.angles)?;
        let mut pixel_lists = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let px = grid.pixels(k, config.pixels)?;
            if px.is_empty() {
                return Err(Error::invalid(format!(
                    "patch {k} has no pixels under {:?} selection; use a larger cell",
                    config.pixels
                )));
            }
            pixel_lists.push(px.into_iter().map(|(r, c)| r * config.width + c).collect());
        }
        Ok(Self {
            config,
            grid,
            angles,
            pixel_lists,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    pub fn angles(&self) -> &AngleGrid {
        &self.angles
    }

    /// Point count of patch `k` under the configured selection.
    pub fn points_in_patch(&self, k: usize) -> usize {
        self.pixel_lists[k].len()
    }

    /// Flattened feature length of patch `k`.
    pub fn feature_len(&self, k: usize) -> usize {
        self.pixel_lists[k].len() * self.angles.len()
    }

    pub fn extract(&self, img: &GrayImage) -> Result<FeatureSet> {
        if img.height != self.config.height || img.width != self.config.width {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} image", self.config.height, self.config.width),
                found: format!("{}x{} image", img.height, img.width),
            });
        }
        let field = if self.config.log_transform {
            compute_gradient(&log_preprocess(img))?
        } else {
            compute_gradient(img)?
        };
        let patches = self
            .pixel_lists
            .par_iter()
            .map(|idx| {
                let points = idx.iter().map(|&i| field.data[i]).collect();
                // Points come from a validated finite field; cannot be empty.
                let d = Distribution2D::new(points).expect("nonempty finite patch");
                discrete_rcdt(&d, &self.angles)
            })
            .collect();
        Ok(FeatureSet {
            config: self.config.clone(),
            patches,
        })
    }
}

/// Optional log preprocessing, gradient, then per-patch R-CDT over all
/// pixels of each patch.
pub fn extract_features(
    img: &GrayImage,
    grid: &PatchGrid,
    angles: &AngleGrid,
    use_log: bool,
) -> Result<FeatureSet> {
    let config = FeatureConfig {
        height: grid.height,
        width: grid.width,
        cell: grid.cell,
        overlap: grid.overlap,
        angles: angles.len(),
        log_transform: use_log,
        pixels: PixelSelection::All,
    };
    FeatureExtractor::new(config)?.extract(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn plane(h: usize, w: usize, a: f64, b: f64, c: f64) -> GrayImage {
        GrayImage::from_fn(h, w, |r, col| a * col as f64 + b * r as f64 + c).unwrap()
    }

    #[test]
    fn image_validation() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 2, vec![0.0, -1.0]).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
        assert!(GrayImage::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let img = GrayImage::new(3, 4, vec![7.0; 12]).unwrap();
        let g = compute_gradient(&img).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn gradient_of_planes() {
        let g = compute_gradient(&plane(5, 6, 1.0, 0.0, 0.0)).unwrap();
        for r in 1..4 {
            for c in 1..5 {
                assert_eq!(g.get(r, c), [1.0, 0.0]);
            }
        }
        let g = compute_gradient(&plane(5, 6, 2.0, 3.0, 1.0)).unwrap();
        // One-sided borders are exact on planes too.
        assert!(g.as_slice().iter().all(|v| *v == [2.0, 3.0]));
    }

    #[test]
    fn gradient_rejects_thin_images() {
        let img = GrayImage::new(1, 5, vec![1.0; 5]).unwrap();
        assert!(matches!(
            compute_gradient(&img),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn brightness_offset_is_invisible_to_gradients() {
        let img = GrayImage::from_fn(6, 7, |r, c| ((r * 31 + c * 17) % 23) as f64).unwrap();
        let shifted = GrayImage::from_fn(6, 7, |r, c| img.get(r, c) + 40.0).unwrap();
        assert_eq!(
            compute_gradient(&img).unwrap(),
            compute_gradient(&shifted).unwrap()
        );
    }

    #[test]
    fn log_preprocess_examples() {
        let zero = GrayImage::new(2, 2, vec![0.0; 4]).unwrap();
        assert_eq!(log_preprocess(&zero), zero);
        let e = GrayImage::new(1, 3, vec![std::f64::consts::E - 1.0, 1.0, 2.0]).unwrap();
        let out = log_preprocess(&e);
        assert!((out.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(out.get(0, 1) < out.get(0, 2));
    }

    #[test]
    fn grid_exact_tiling() {
        let g = build_patch_grid(8, 8, 4, 0).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g.points_per_patch(), 16);
        let g = build_patch_grid(8, 8, 4, 2).unwrap();
        assert_eq!(g.len(), 9);
    }

    fn covered(g: &PatchGrid) -> HashSet<(usize, usize)> {
        (0..g.len())
            .flat_map(|k| g.pixels(k, PixelSelection::All).unwrap())
            .collect()
    }

    #[test]
    fn grid_anchors_last_cell_inward() {
        let g = build_patch_grid(9, 9, 4, 0).unwrap();
        assert_eq!(g.len(), 9);
        let rows: Vec<usize> = g.patches().iter().step_by(3).map(|p| p.row).collect();
        let cols: Vec<usize> = g.patches()[..3].iter().map(|p| p.col).collect();
        assert_eq!(rows, vec![0, 4, 5]);
        assert_eq!(cols, vec![0, 4, 5]);
        // Independent coverage check by enumeration.
        let all: HashSet<_> = (0..9).flat_map(|r| (0..9).map(move |c| (r, c))).collect();
        assert_eq!(covered(&g), all);
    }

    #[test]
    fn grid_coverage_over_many_shapes() {
        for h in 4..14 {
            for w in 4..14 {
                for overlap in 0..4 {
                    let g = build_patch_grid(h, w, 4, overlap).unwrap();
                    assert_eq!(covered(&g).len(), h * w, "{h}x{w} overlap {overlap}");
                    for k in 0..g.len() {
                        assert_eq!(g.pixels(k, PixelSelection::All).unwrap().len(), 16);
                    }
                }
            }
        }
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(build_patch_grid(8, 8, 1, 0).is_err());
        assert!(build_patch_grid(8, 8, 4, 4).is_err());
        assert!(build_patch_grid(3, 8, 4, 0).is_err());
    }

    #[test]
    fn stencil_interior_pixels() {
        let g = build_patch_grid(8, 8, 4, 0).unwrap();
        // Top-left patch: image-border rows/cols keep their one-sided stencil
        // inside the patch, the last row/col of the patch does not.
        let px = g.pixels(0, PixelSelection::StencilInterior).unwrap();
        let want: Vec<_> = (0..3).flat_map(|r| (0..3).map(move |c| (r, c))).collect();
        assert_eq!(px, want);
        let inner = build_patch_grid(12, 12, 4, 0).unwrap();
        let px = inner.pixels(4, PixelSelection::StencilInterior).unwrap();
        assert_eq!(px, vec![(5, 5), (5, 6), (6, 5), (6, 6)]);
    }

    #[test]
    fn patch_distribution_examples() {
        let img = plane(8, 8, 2.0, 3.0, 0.0);
        let f = compute_gradient(&img).unwrap();
        let g = build_patch_grid(8, 8, 4, 2).unwrap();
        let d = patch_distribution(&f, &g, 4).unwrap();
        assert_eq!(d.len(), 16);
        assert!(d.points().iter().all(|p| *p == [2.0, 3.0]));

        let flat = compute_gradient(&GrayImage::new(8, 8, vec![3.0; 64]).unwrap()).unwrap();
        let d = patch_distribution(&flat, &g, 0).unwrap();
        assert!(d.points().iter().all(|p| *p == [0.0, 0.0]));

        assert!(patch_distribution(&f, &g, 9).is_err());
    }

    #[test]
    fn constant_image_gives_zero_features() {
        let img = GrayImage::new(8, 8, vec![5.0; 64]).unwrap();
        let g = build_patch_grid(8, 8, 4, 2).unwrap();
        let fs = extract_features(&img, &g, &AngleGrid::new(8).unwrap(), false).unwrap();
        assert_eq!(fs.len(), 9);
        for p in fs.patches() {
            assert_eq!((p.rows(), p.cols()), (16, 8));
            assert!(p.as_slice().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let img = GrayImage::from_fn(16, 12, |r, c| ((r * 7 + c * 13) % 11) as f64 * 1.3).unwrap();
        let ex = FeatureExtractor::new(FeatureConfig::new(16, 12)).unwrap();
        assert_eq!(ex.extract(&img).unwrap(), ex.extract(&img).unwrap());
        let wrong = GrayImage::new(12, 16, vec![0.0; 192]).unwrap();
        assert!(matches!(
            ex.extract(&wrong),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn config_diff_lists_fields() {
        let a = FeatureConfig::new(8, 8);
        let mut b = a.clone();
        assert!(a.diff(&b).is_empty());
        b.angles = 4;
        b.log_transform = true;
        let d = a.diff(&b);
        assert_eq!(d.len(), 2);
        assert!(d[0].starts_with("angles"));
    }
}
