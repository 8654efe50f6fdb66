//! Seeded synthetic images and illumination parameters for experiments that
//! need the generative model to hold exactly (no clamping).

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{GrayImage, PatchGrid};
use crate::illumination::{GlobalIlluminationParams, Interval, PatchIlluminationParams};

const WAVES: usize = 12;

/// Sum of random plane waves with wavelengths of roughly 6 to 20 pixels,
/// rescaled to `range`. Different seeds give unrelated textures.
pub fn smooth_texture(
    seed: u64,
    height: usize,
    width: usize,
    range: Interval,
) -> Result<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..WAVES)
        .map(|_| {
            let amp = rng.gen_range(0.5..1.0);
            let freq = rng.gen_range(0.3..1.1);
            let dir = rng.gen_range(0.0..TAU);
            let phase = rng.gen_range(0.0..TAU);
            (amp, freq * dir.cos(), freq * dir.sin(), phase)
        })
        .collect();
    let raw: Vec<f64> = (0..height * width)
        .map(|i| {
            let (r, c) = ((i / width) as f64, (i % width) as f64);
            waves
                .iter()
                .map(|(a, fx, fy, ph)| a * (fx * c + fy * r + ph).sin())
                .sum()
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels = raw
        .into_iter()
        .map(|v| range.lo + (v - lo) / span * (range.hi - range.lo))
        .collect();
    GrayImage::new(height, width, pixels)
}

/// Per-patch parameters with `α ∈ alpha`, `β ∈ beta` and each component of
/// `b` in `[-b_bound, b_bound]`. Where a patch would produce a negative pixel,
/// `b` is halved until it does not.
pub fn random_patch_illumination(
    seed: u64,
    img: &GrayImage,
    grid: &PatchGrid,
    alpha: Interval,
    beta: Interval,
    b_bound: f64,
) -> Result<PatchIlluminationParams> {
    if !(alpha.lo > 0.0) || beta.lo < 0.0 || !(b_bound >= 0.0) {
        return Err(Error::invalid(
            "need alpha > 0, beta >= 0 and a nonnegative b bound",
        ));
    }
    let (h, w) = (img.height(), img.width());
    let cell = grid.cell();
    let mut params = Vec::with_capacity(grid.len());
    for (k, rect) in grid.patches().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let a = draw(&mut rng, alpha);
        let be = draw(&mut rng, beta);
        let mut b = [
            rng.gen_range(-b_bound..=b_bound),
            rng.gen_range(-b_bound..=b_bound),
        ];
        loop {
            let p = GlobalIlluminationParams::new(a, be, b)?;
            let ok = (rect.row..rect.row + cell).all(|r| {
                (rect.col..rect.col + cell).all(|c| p.apply_at(img.get(r, c), r, c, h, w) >= 0.0)
            });
            if ok {
                params.push(p);
                break;
            }
            if b == [0.0, 0.0] {
                unreachable!("alpha > 0, beta >= 0 and I >= 0 cannot go negative");
            }
            b = if b[0].abs().max(b[1].abs()) < 1e-12 {
                [0.0, 0.0]
            } else {
                [b[0] / 2.0, b[1] / 2.0]
            };
        }
    }
    PatchIlluminationParams::new(params)
}

fn draw(rng: &mut ChaCha8Rng, iv: Interval) -> f64 {
    if iv.lo == iv.hi {
        iv.lo
    } else {
        rng.gen_range(iv.lo..=iv.hi)
    }
}
