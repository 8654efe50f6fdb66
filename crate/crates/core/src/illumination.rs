//! Affine illumination model in image space: `I'(x) = α·I(x) + β + bᵀx`.
//!
//! `x` is the pixel position in normalized coordinates, `x = col / width`,
//! `y = row / height`, so `x ∈ [0, 1)²` over the image. Because the image
//! gradient is taken in pixel units, the linear term shifts every gradient
//! vector by `(b_x / width, b_y / height)`, see
//! [`GlobalIlluminationParams::gradient_offset`]. `β` vanishes under
//! differencing.
//!
//! Results below zero are clamped to zero and counted.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{GrayImage, PatchGrid};
use crate::transport::AffineDeformation;

/// Contrast `alpha`, brightness `beta`, linear illumination gradient `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalIlluminationParams {
    pub alpha: f64,
    pub beta: f64,
    pub b: [f64; 2],
}

impl GlobalIlluminationParams {
    pub fn new(alpha: f64, beta: f64, b: [f64; 2]) -> Result<Self> {
        let p = Self { alpha, beta, b };
        p.validate()?;
        Ok(p)
    }

    pub fn identity() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            b: [0.0, 0.0],
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.b[0].is_finite() && self.b[1].is_finite()) {
            return Err(Error::invalid("beta and b must be finite"));
        }
        Ok(())
    }

    /// Per-pixel gradient shift induced by `b` on an image of this size.
    pub fn gradient_offset(&self, height: usize, width: usize) -> [f64; 2] {
        [self.b[0] / width as f64, self.b[1] / height as f64]
    }

    /// The gradient-space map `z ↦ αz + b'` this illumination induces.
    pub fn deformation(&self, height: usize, width: usize) -> Result<AffineDeformation> {
        AffineDeformation::new(self.alpha, self.gradient_offset(height, width))
    }

    #[inline]
    pub(crate) fn apply_at(
        &self,
        value: f64,
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    ) -> f64 {
        let x = col as f64 / width as f64;
        let y = row as f64 / height as f64;
        self.alpha * value + self.beta + self.b[0] * x + self.b[1] * y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlluminatedImage {
    pub image: GrayImage,
    /// Pixels whose value was negative before clamping.
    pub clamped: usize,
}

pub fn apply_global_illumination(
    img: &GrayImage,
    p: &GlobalIlluminationParams,
) -> Result<IlluminatedImage> {
    p.validate()?;
    let (h, w) = (img.height(), img.width());
    let mut clamped = 0;
    let pixels = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let out = p.apply_at(v, i / w, i % w, h, w);
            if out < 0.0 {
                clamped += 1;
                0.0
            } else {
                out
            }
        })
        .collect();
    Ok(IlluminatedImage {
        image: GrayImage::new(h, w, pixels)?,
        clamped,
    })
}

/// One parameter set per patch of a non-overlapping grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchIlluminationParams {
    params: Vec<GlobalIlluminationParams>,
}

impl PatchIlluminationParams {
    pub fn new(params: Vec<GlobalIlluminationParams>) -> Result<Self> {
        for p in &params {
            p.validate()?;
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[GlobalIlluminationParams] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Transforms each patch with its own parameters. The grid must partition
/// the image: zero overlap and image sides divisible by the cell size.
pub fn apply_patch_illumination(
    img: &GrayImage,
    grid: &PatchGrid,
    p: &PatchIlluminationParams,
) -> Result<IlluminatedImage> {
    let (h, w) = (img.height(), img.width());
    if grid.overlap() != 0 || h % grid.cell() != 0 || w % grid.cell() != 0 {
        return Err(Error::invalid(format!(
            "patch-wise illumination needs a partition: overlap 0 and {h}x{w} divisible by cell {} (got overlap {})",
            grid.cell(),
            grid.overlap()
        )));
    }
    if grid.height() != h || grid.width() != w {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} grid", h, w),
            found: format!("{}x{} grid", grid.height(), grid.width()),
        });
    }
    if p.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} patch parameter sets", grid.len()),
            found: format!("{}", p.len()),
        });
    }
    let mut out = img.pixels().to_vec();
    let mut clamped = 0;
    let cell = grid.cell();
    for (rect, params) in grid.patches().iter().zip(&p.params) {
        for r in rect.row..rect.row + cell {
            for c in rect.col..rect.col + cell {
                let v = params.apply_at(img.get(r, c), r, c, h, w);
                out[r * w + c] = if v < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    v
                };
            }
        }
    }
    Ok(IlluminatedImage {
        image: GrayImage::new(h, w, out)?,
        clamped,
    })
}

/// Closed interval `[lo, hi]`; parses from `"lo:hi"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::invalid(format!(
                "empty or non-finite interval [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

impl FromStr for Interval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("expected lo:hi, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("not a number: {v:?}")))
        };
        Interval::new(parse(lo)?, parse(hi)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRanges {
    pub alpha: Interval,
    pub beta: Interval,
    pub b_x: Interval,
    pub b_y: Interval,
    pub seed: u64,
}

impl Default for SamplingRanges {
    /// α ∈ [0.1, 3], β ∈ [1, 30], each component of b ∈ [0.1, 3].
    fn default() -> Self {
        Self {
            alpha: Interval { lo: 0.1, hi: 3.0 },
            beta: Interval { lo: 1.0, hi: 30.0 },
            b_x: Interval { lo: 0.1, hi: 3.0 },
            b_y: Interval { lo: 0.1, hi: 3.0 },
            seed: 0,
        }
    }
}

impl SamplingRanges {
    fn validate(&self) -> Result<()> {
        for (name, iv) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("b_x", self.b_x),
            ("b_y", self.b_y),
        ] {
            Interval::new(iv.lo, iv.hi).map_err(|e| Error::invalid(format!("{name}: {e}")))?;
        }
        if !(self.alpha.lo > 0.0) {
            return Err(Error::invalid(format!(
                "alpha interval must be strictly positive, got [{}, {}]",
                self.alpha.lo, self.alpha.hi
            )));
        }
        Ok(())
    }

    /// Draws sample `index`. Each index has its own ChaCha stream, so the
    /// sequence is prefix-stable and can be split across workers.
    pub fn sample_at(&self, index: u64) -> Result<GlobalIlluminationParams> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let alpha = self.alpha.sample(&mut rng);
        let beta = self.beta.sample(&mut rng);
        let b = [self.b_x.sample(&mut rng), self.b_y.sample(&mut rng)];
        GlobalIlluminationParams::new(alpha, beta, b)
    }
}

/// `count` independent uniform draws, reproducible from `r.seed`.
pub fn sample_illumination(
    r: &SamplingRanges,
    count: usize,
) -> Result<Vec<GlobalIlluminationParams>> {
    r.validate()?;
    (0..count as u64).map(|i| r.sample_at(i)).collect()
}
