//! Brute-force oracles and seeded property checks.
//!
//! [`assignment_wasserstein_1d`] enumerates every bijection between two
//! supports and never sorts; it is the independent reference for the sorted
//! closed form in [`crate::transport::wasserstein_1d`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{build_patch_grid, FeatureConfig, FeatureExtractor, PixelSelection};
use crate::illumination::{apply_patch_illumination, Interval};
use crate::subspace::{classify, subspace_distance, train_model, train_subspace, RankRule};
use crate::synthetic::{random_patch_illumination, smooth_texture};
use crate::transport::{
    discrete_cdt, discrete_rcdt, push_forward_1d, push_forward_affine_2d, sliced_wasserstein,
    AffineDeformation, AngleGrid, Distribution1D, Distribution2D, MonotoneMap1D,
};

/// Largest support size the assignment oracle accepts (8! = 40 320).
pub const MAX_ORACLE_POINTS: usize = 8;

/// `sqrt((1/N) min_σ Σ (a_i − b_σ(i))²)` over all `N!` permutations.
pub fn assignment_wasserstein_1d(a: &Distribution1D, b: &Distribution1D) -> Result<f64> {
    let n = a.len();
    if n != b.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} points"),
            found: format!("{} points", b.len()),
        });
    }
    if n > MAX_ORACLE_POINTS {
        return Err(Error::invalid(format!(
            "assignment oracle refuses N = {n} > {MAX_ORACLE_POINTS}"
        )));
    }
    let xs = a.points();
    let ys = b.points();
    let cost = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| (xs[i] - ys[j]) * (xs[i] - ys[j]))
            .sum()
    };
    // Heap's algorithm, iterative.
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = cost(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((best / n as f64).sqrt())
}

fn check_range(n: usize, range: Interval) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    Interval::new(range.lo, range.hi).map(|_| ())
}

fn uniform(rng: &mut ChaCha8Rng, range: Interval) -> f64 {
    if range.lo == range.hi {
        range.lo
    } else {
        rng.gen_range(range.lo..=range.hi)
    }
}

pub fn random_distribution_1d(seed: u64, n: usize, range: Interval) -> Result<Distribution1D> {
    check_range(n, range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Distribution1D::new((0..n).map(|_| uniform(&mut rng, range)).collect())
}

pub fn random_distribution_2d(seed: u64, n: usize, range: Interval) -> Result<Distribution2D> {
    check_range(n, range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Distribution2D::new(
        (0..n)
            .map(|_| [uniform(&mut rng, range), uniform(&mut rng, range)])
            .collect(),
    )
}

/// The kernels under test. Swapping `cdt` for a faulty implementation must
/// make the suite fail.
#[derive(Clone, Copy)]
pub struct Kernels {
    /// Sorted support of a 1D distribution.
    pub cdt: fn(&Distribution1D) -> Vec<f64>,
}

fn sorted_cdt(d: &Distribution1D) -> Vec<f64> {
    discrete_cdt(d).into_values()
}

impl Default for Kernels {
    fn default() -> Self {
        Self { cdt: sorted_cdt }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub trials: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Per-trial seeds that exceeded the tolerance.
    pub counterexample_seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub seed: u64,
    pub trials: usize,
    pub passed: bool,
    pub properties: Vec<PropertyOutcome>,
}

type Check = fn(&mut ChaCha8Rng, &Kernels) -> Result<f64>;

struct Property {
    name: &'static str,
    tolerance: f64,
    check: Check,
}

fn registry() -> Vec<Property> {
    vec![
        Property {
            name: "isometry",
            tolerance: 1e-9,
            check: check_isometry,
        },
        Property {
            name: "composition",
            tolerance: 0.0,
            check: check_composition,
        },
        Property {
            name: "translation",
            tolerance: 0.0,
            check: check_translation,
        },
        Property {
            name: "scaling",
            tolerance: 0.0,
            check: check_scaling,
        },
        Property {
            name: "convexity_1d",
            tolerance: 1e-9,
            check: check_convexity_1d,
        },
        Property {
            name: "convexity_2d",
            tolerance: 1e-9,
            check: check_convexity_2d,
        },
        Property {
            name: "affine_covariance",
            tolerance: 1e-9,
            check: check_affine_covariance,
        },
        Property {
            name: "metric_axioms",
            tolerance: 1e-12,
            check: check_metric_axioms,
        },
        Property {
            name: "permutation_invariance",
            tolerance: 0.0,
            check: check_permutation_invariance,
        },
        Property {
            name: "projection_idempotence",
            tolerance: 1e-10,
            check: check_projection_idempotence,
        },
        Property {
            name: "zero_distance_membership",
            tolerance: 1e-6,
            check: check_zero_distance_membership,
        },
    ]
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of trial `trial` of property `property`; rerunning a check with a
/// fresh `ChaCha8Rng::seed_from_u64(trial_seed(..))` reproduces it.
pub fn trial_seed(seed: u64, property: usize, trial: usize) -> u64 {
    splitmix64(seed ^ splitmix64(((property as u64) << 32) | trial as u64))
}

pub fn run_property_suite(seed: u64, trials: usize) -> Result<PropertyReport> {
    run_property_suite_with(seed, trials, &Kernels::default())
}

pub fn run_property_suite_with(
    seed: u64,
    trials: usize,
    kernels: &Kernels,
) -> Result<PropertyReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let properties: Vec<PropertyOutcome> = registry()
        .iter()
        .enumerate()
        .map(|(pi, prop)| {
            let results: Vec<(u64, f64)> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let s = trial_seed(seed, pi, t);
                    let mut rng = ChaCha8Rng::seed_from_u64(s);
                    let dev = (prop.check)(&mut rng, kernels).unwrap_or(f64::INFINITY);
                    (s, if dev.is_nan() { f64::INFINITY } else { dev })
                })
                .collect();
            let max_deviation = results.iter().map(|r| r.1).fold(0.0, f64::max);
            let counterexample_seeds: Vec<u64> = results
                .iter()
                .filter(|r| !(r.1 <= prop.tolerance))
                .map(|r| r.0)
                .collect();
            PropertyOutcome {
                name: prop.name,
                trials,
                max_deviation,
                tolerance: prop.tolerance,
                passed: counterexample_seeds.is_empty(),
                counterexample_seeds,
            }
        })
        .collect();
    Ok(PropertyReport {
        seed,
        trials,
        passed: properties.iter().all(|p| p.passed),
        properties,
    })
}

fn rand_1d(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Distribution1D {
    Distribution1D::new((0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("finite")
}

fn rand_2d(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Distribution2D {
    Distribution2D::new(
        (0..n)
            .map(|_| [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)])
            .collect(),
    )
    .expect("finite")
}

/// Random strictly increasing piecewise-linear map with 2 to 6 knots.
pub fn random_monotone_map(rng: &mut ChaCha8Rng) -> MonotoneMap1D {
    let k = rng.gen_range(2..=6);
    let mut x = rng.gen_range(-10.0..-5.0);
    let mut y = rng.gen_range(-10.0..10.0);
    let mut knots = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for _ in 0..k {
        knots.push(x);
        values.push(y);
        x += rng.gen_range(0.5..5.0);
        y += rng.gen_range(0.1..5.0);
    }
    MonotoneMap1D::new(knots, values).expect("increasing by construction")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `max |a − b| / max(1, max |b|)`.
fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().map(|v| v.abs()).fold(1.0, f64::max);
    max_abs_diff(a, b) / scale
}

fn kernel_wasserstein(k: &Kernels, a: &Distribution1D, b: &Distribution1D) -> f64 {
    let sa = (k.cdt)(a);
    let sb = (k.cdt)(b);
    let sum: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum();
    (sum / a.len() as f64).sqrt()
}

fn check_isometry(rng: &mut ChaCha8Rng, k: &Kernels) -> Result<f64> {
    let n = rng.gen_range(2..=6);
    let a = rand_1d(rng, n, 10.0);
    let b = rand_1d(rng, n, 10.0);
    Ok((kernel_wasserstein(k, &a, &b) - assignment_wasserstein_1d(&a, &b)?).abs())
}

fn check_composition(rng: &mut ChaCha8Rng, k: &Kernels) -> Result<f64> {
    let n = rng.gen_range(1..=16);
    let d = rand_1d(rng, n, 12.0);
    let t = random_monotone_map(rng);
    let lhs = (k.cdt)(&push_forward_1d(&d, &t));
    let rhs: Vec<f64> = (k.cdt)(&d).iter().map(|&z| t.eval(z)).collect();
    Ok(max_abs_diff(&lhs, &rhs))
}

fn check_translation(rng: &mut ChaCha8Rng, k: &Kernels) -> Result<f64> {
    let n = rng.gen_range(1..=16);
    let d = rand_1d(rng, n, 10.0);
    let a = rng.gen_range(-5.0..5.0);
    let shifted = Distribution1D::new(d.points().iter().map(|z| z + a).collect())?;
    let rhs: Vec<f64> = (k.cdt)(&d).iter().map(|z| z + a).collect();
    Ok(max_abs_diff(&(k.cdt)(&shifted), &rhs))
}

fn check_scaling(rng: &mut ChaCha8Rng, k: &Kernels) -> Result<f64> {
    let n = rng.gen_range(1..=16);
    let d = rand_1d(rng, n, 10.0);
    let c = rng.gen_range(0.01..10.0);
    let scaled = Distribution1D::new(d.points().iter().map(|z| c * z).collect())?;
    let rhs: Vec<f64> = (k.cdt)(&d).iter().map(|z| c * z).collect();
    Ok(max_abs_diff(&(k.cdt)(&scaled), &rhs))
}

fn random_lambda(rng: &mut ChaCha8Rng) -> f64 {
    [0.0, 0.25, 0.5, 0.75, 1.0][rng.gen_range(0..5)]
}

fn check_convexity_1d(rng: &mut ChaCha8Rng, k: &Kernels) -> Result<f64> {
    let n = rng.gen_range(1..=16);
    let d = rand_1d(rng, n, 12.0);
    let t1 = random_monotone_map(rng);
    let t2 = random_monotone_map(rng);
    let lambda = random_lambda(rng);
    let f1 = (k.cdt)(&push_forward_1d(&d, &t1));
    let f2 = (k.cdt)(&push_forward_1d(&d, &t2));
    let lhs: Vec<f64> = f1
        .iter()
        .zip(&f2)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    let tl = MonotoneMap1D::convex_combination(&t1, &t2, lambda)?;
    Ok(max_rel_diff(&lhs, &(k.cdt)(&push_forward_1d(&d, &tl))))
}

fn random_deformation(rng: &mut ChaCha8Rng) -> AffineDeformation {
    AffineDeformation::new(
        rng.gen_range(0.1..=3.0),
        [rng.gen_range(-2.0..=2.0), rng.gen_range(-2.0..=2.0)],
    )
    .expect("alpha > 0")
}

fn random_grid(rng: &mut ChaCha8Rng) -> AngleGrid {
    AngleGrid::new([2, 4, 8][rng.gen_range(0..3)]).expect("m >= 1")
}

fn check_convexity_2d(rng: &mut ChaCha8Rng, _: &Kernels) -> Result<f64> {
    let n = rng.gen_range(1..=64);
    let d = rand_2d(rng, n, 10.0);
    let g = random_grid(rng);
    let h1 = random_deformation(rng);
    let h2 = random_deformation(rng);
    let lambda = random_lambda(rng);
    let r1 = discrete_rcdt(&push_forward_affine_2d(&d, &h1), &g);
    let r2 = discrete_rcdt(&push_forward_affine_2d(&d, &h2), &g);
    let lhs: Vec<f64> = r1
        .as_slice()
        .iter()
        .zip(r2.as_slice())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    let hl = AffineDeformation::convex_combination(&h1, &h2, lambda)?;
    let rhs = discrete_rcdt(&push_forward_affine_2d(&d, &hl), &g);
    Ok(max_rel_diff(&lhs, rhs.as_slice()))
}

fn check_affine_covariance(rng: &mut ChaCha8Rng, _: &Kernels) -> Result<f64> {
    let n = rng.gen_range(1..=64);
    let d = rand_2d(rng, n, 10.0);
    let g = random_grid(rng);
    let h = random_deformation(rng);
    let lhs = discrete_rcdt(&push_forward_affine_2d(&d, &h), &g);
    let base = discrete_rcdt(&d, &g);
    let b = h.offset();
    let rhs: Vec<f64> = (0..g.len())
        .flat_map(|j| {
            let w = g.direction(j);
            let shift = b[0] * w[0] + b[1] * w[1];
            base.column(j)
                .iter()
                .map(move |v| h.alpha() * v + shift)
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(max_rel_diff(lhs.as_slice(), &rhs))
}

fn check_metric_axioms(rng: &mut ChaCha8Rng, _: &Kernels) -> Result<f64> {
    let n = rng.gen_range(1..=32);
    let g = random_grid(rng);
    let [a, b, c] = [0, 1, 2].map(|_| discrete_rcdt(&rand_2d(rng, n, 10.0), &g));
    let ab = sliced_wasserstein(&a, &b)?;
    let ba = sliced_wasserstein(&b, &a)?;
    let bc = sliced_wasserstein(&b, &c)?;
    let ac = sliced_wasserstein(&a, &c)?;
    let aa = sliced_wasserstein(&a, &a)?;
    if ab != ba || ab < 0.0 || aa != 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((ac - ab - bc).max(0.0))
}

fn check_permutation_invariance(rng: &mut ChaCha8Rng, _: &Kernels) -> Result<f64> {
    let n = rng.gen_range(1..=32);
    let d = rand_2d(rng, n, 10.0);
    let g = random_grid(rng);
    let mut pts = d.points().to_vec();
    pts.shuffle(rng);
    let shuffled = Distribution2D::new(pts)?;
    Ok(max_abs_diff(
        discrete_rcdt(&d, &g).as_slice(),
        discrete_rcdt(&shuffled, &g).as_slice(),
    ))
}

fn check_projection_idempotence(rng: &mut ChaCha8Rng, _: &Kernels) -> Result<f64> {
    let n = rng.gen_range(1..=8);
    let g = random_grid(rng);
    let span = crate::subspace::build_spanning_set(&g, n)?;
    let l = rng.gen_range(1..=4);
    let feats: Vec<Vec<f64>> = (0..l)
        .map(|_| (0..n * g.len()).map(|_| rng.gen_range(-5.0..5.0)).collect())
        .collect();
    let s = train_subspace(&feats, &span, RankRule::VarianceKeep(1.0))?;
    let v: Vec<f64> = (0..n * g.len()).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(subspace_distance(&s.project(&v)?, &s)? / vn)
}

/// Three random 16×16 templates, one training image each, one patch-wise
/// illuminated test per class. Deviation is the worst ratio of true-class
/// distance to the mean of the other classes' distances.
fn check_zero_distance_membership(rng: &mut ChaCha8Rng, _: &Kernels) -> Result<f64> {
    let (h, w, classes) = (16, 16, 3);
    let range = Interval::new(20.0, 120.0)?;
    let config = FeatureConfig {
        cell: 4,
        overlap: 0,
        angles: 8,
        pixels: PixelSelection::StencilInterior,
        ..FeatureConfig::new(h, w)
    };
    let ex = FeatureExtractor::new(config)?;
    let grid = build_patch_grid(h, w, 4, 0)?;
    let templates = (0..classes)
        .map(|_| smooth_texture(rng.gen(), h, w, range))
        .collect::<Result<Vec<_>>>()?;
    let train = templates
        .iter()
        .enumerate()
        .map(|(c, t)| Ok((format!("c{c}"), ex.extract(t)?)))
        .collect::<Result<Vec<_>>>()?;
    let model = train_model(&train, RankRule::default())?;
    let mut worst = 0.0f64;
    for (c, t) in templates.iter().enumerate() {
        let params = random_patch_illumination(
            rng.gen(),
            t,
            &grid,
            Interval::new(0.5, 2.0)?,
            Interval::new(0.0, 10.0)?,
            40.0,
        )?;
        let test = apply_patch_illumination(t, &grid, &params)?;
        let result = classify(&ex.extract(&test.image)?, &model)?;
        if result.predicted != c || test.clamped != 0 {
            return Ok(f64::INFINITY);
        }
        let others: Vec<f64> = (0..classes)
            .filter(|&o| o != c)
            .map(|o| result.distances[o])
            .collect();
        let mean = others.iter().sum::<f64>() / others.len() as f64;
        worst = worst.max(result.distances[c] / mean);
    }
    Ok(worst)
}
