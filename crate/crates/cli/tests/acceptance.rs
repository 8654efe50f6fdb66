//! Acceptance suite. Prints one PASS / FAIL / SKIP line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Criterion 10 needs the Extended Yale B cropped images: point
//! `DRCDT_YALEB_MANIFEST` at a manifest with a `train` split (subset 1,
//! one image per subject) and a test split named by `DRCDT_YALEB_TEST_SPLIT`
//! (default `subset4`).

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drcdt::io::{archive_paths, load_model, save_model, save_pgm};
use drcdt::oracle::{
    assignment_wasserstein_1d, random_distribution_1d, random_distribution_2d, random_monotone_map,
};
use drcdt::synthetic::{random_patch_illumination, smooth_texture};
use drcdt::*;
use drcdt_cli::{cmd_evaluate, cmd_train, EvaluateArgs, FeatureArgs, TrainArgs};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Status>);

enum Status {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool")
        .install(f)
}

fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

fn c1_sorting_assignment() -> Outcome {
    let start = Instant::now();
    let range = Interval::new(-10.0, 10.0).unwrap();
    let mut worst = 0.0f64;
    for i in 0..500u64 {
        let n = 2 + (i % 5) as usize;
        let a = random_distribution_1d(10_000 + 2 * i, n, range).unwrap();
        let b = random_distribution_1d(10_001 + 2 * i, n, range).unwrap();
        let d =
            (wasserstein_1d(&a, &b).unwrap() - assignment_wasserstein_1d(&a, &b).unwrap()).abs();
        worst = worst.max(d);
    }
    let t = start.elapsed();
    check(
        worst <= 1e-9 && t < Duration::from_secs(5),
        format!(
            "500 pairs, max |diff| = {worst:.2e} (tol 1e-9), {:.3}s (limit 5s)",
            t.as_secs_f64()
        ),
    )
}

fn c2_composition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let range = Interval::new(-15.0, 15.0).unwrap();
    let mut mismatches = 0;
    for i in 0..200u64 {
        let n = rng.gen_range(1..=32);
        let d = random_distribution_1d(20_000 + i, n, range).unwrap();
        let t = random_monotone_map(&mut rng);
        let lhs = discrete_cdt(&push_forward_1d(&d, &t));
        let rhs: Vec<f64> = discrete_cdt(&d)
            .values()
            .iter()
            .map(|&z| t.eval(z))
            .collect();
        if lhs.values() != &rhs[..] {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("200 trials, {mismatches} not bit-identical"),
    )
}

fn random_h0(rng: &mut ChaCha8Rng) -> AffineDeformation {
    AffineDeformation::new(
        rng.gen_range(0.1..=3.0),
        [rng.gen_range(-2.0..=2.0), rng.gen_range(-2.0..=2.0)],
    )
    .unwrap()
}

fn c3_affine_covariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let range = Interval::new(-10.0, 10.0).unwrap();
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let n = rng.gen_range(1..=64);
        let m = [2, 4, 8][rng.gen_range(0..3)];
        let g = AngleGrid::new(m).unwrap();
        let d = random_distribution_2d(30_000 + i, n, range).unwrap();
        let h = random_h0(&mut rng);
        let lhs = discrete_rcdt(&push_forward_affine_2d(&d, &h), &g);
        let base = discrete_rcdt(&d, &g);
        let b = h.offset();
        let mut rhs = Vec::with_capacity(n * m);
        for j in 0..m {
            let w = g.direction(j);
            rhs.extend(
                base.column(j)
                    .iter()
                    .map(|v| h.alpha() * v + b[0] * w[0] + b[1] * w[1]),
            );
        }
        worst = worst.max(rel_dev(lhs.as_slice(), &rhs));
    }
    check(
        worst <= 1e-9,
        format!("100 trials, max relative deviation {worst:.2e} (tol 1e-9)"),
    )
}

fn c4_convexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let range = Interval::new(-10.0, 10.0).unwrap();
    let lambdas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let n = rng.gen_range(1..=64);
        let g = AngleGrid::new([2, 4, 8][rng.gen_range(0..3)]).unwrap();
        let d = random_distribution_2d(40_000 + i, n, range).unwrap();
        let (h1, h2) = (random_h0(&mut rng), random_h0(&mut rng));
        let lambda = lambdas[i as usize % 5];
        let r1 = discrete_rcdt(&push_forward_affine_2d(&d, &h1), &g);
        let r2 = discrete_rcdt(&push_forward_affine_2d(&d, &h2), &g);
        let mix: Vec<f64> = r1
            .as_slice()
            .iter()
            .zip(r2.as_slice())
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        let hl = AffineDeformation::convex_combination(&h1, &h2, lambda).unwrap();
        let direct = discrete_rcdt(&push_forward_affine_2d(&d, &hl), &g);
        worst = worst.max(rel_dev(&mix, direct.as_slice()));
    }
    check(
        worst <= 1e-9,
        format!("100 trials, max relative deviation {worst:.2e} (tol 1e-9)"),
    )
}

fn c5_zero_distance_classification() -> Outcome {
    let start = Instant::now();
    let result = single_threaded(|| -> Result<(usize, usize, f64, usize), drcdt::Error> {
        let (h, w, classes, tests) = (64, 64, 10, 50);
        let config = FeatureConfig {
            cell: 4,
            overlap: 0,
            angles: 8,
            pixels: PixelSelection::StencilInterior,
            ..FeatureConfig::new(h, w)
        };
        let ex = FeatureExtractor::new(config)?;
        let range = Interval::new(20.0, 200.0)?;
        let templates = (0..classes)
            .map(|c| smooth_texture(500 + c as u64, h, w, range))
            .collect::<Result<Vec<_>>>()?;
        let train = templates
            .iter()
            .enumerate()
            .map(|(c, t)| Ok((format!("subject{c:02}"), ex.extract(t)?)))
            .collect::<Result<Vec<_>>>()?;
        let model = train_model(&train, RankRule::default())?;
        let (alpha, beta) = (Interval::new(0.5, 2.0)?, Interval::new(0.0, 10.0)?);
        let mut correct = 0;
        let mut worst_ratio = 0.0f64;
        let mut clamped = 0;
        for (c, t) in templates.iter().enumerate() {
            for i in 0..tests {
                let seed = (c * 1000 + i) as u64;
                let params = random_patch_illumination(seed, t, ex.grid(), alpha, beta, 40.0)?;
                let img = apply_patch_illumination(t, ex.grid(), &params)?;
                clamped += img.clamped;
                let r = classify(&ex.extract(&img.image)?, &model)?;
                correct += usize::from(r.predicted == c);
                let others: f64 = (0..classes)
                    .filter(|&o| o != c)
                    .map(|o| r.distances[o])
                    .sum::<f64>()
                    / (classes - 1) as f64;
                worst_ratio = worst_ratio.max(r.distances[c] / others);
            }
        }
        Ok((correct, classes * tests, worst_ratio, clamped))
    });
    let t = start.elapsed();
    let (correct, total, ratio, clamped) = result.map_err(|e| e.to_string())?;
    check(
        correct == total && ratio <= 1e-6 && clamped == 0 && t < Duration::from_secs(60),
        format!(
            "{correct}/{total} correct, worst d_true / mean d_other = {ratio:.2e} (tol 1e-6), {clamped} clamped pixels, {:.2}s single-threaded (limit 60s)",
            t.as_secs_f64()
        ),
    )
}

/// Bilinear sample of `img` at fractional `(r, c)`, clamped to the border.
fn sample(img: &GrayImage, r: f64, c: f64) -> f64 {
    let r = r.clamp(0.0, (img.height() - 1) as f64);
    let c = c.clamp(0.0, (img.width() - 1) as f64);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = (
        (r0 + 1).min(img.height() - 1),
        (c0 + 1).min(img.width() - 1),
    );
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    let top = img.get(r0, c0) * (1.0 - fc) + img.get(r0, c1) * fc;
    let bottom = img.get(r1, c0) * (1.0 - fc) + img.get(r1, c1) * fc;
    top * (1.0 - fr) + bottom * fr
}

/// Rotates by `angle` and scales by `scale` about the centre, then shifts.
fn warp(img: &GrayImage, angle: f64, scale: f64, shift: [f64; 2]) -> GrayImage {
    let (cy, cx) = (
        (img.height() - 1) as f64 / 2.0,
        (img.width() - 1) as f64 / 2.0,
    );
    let (s, c) = angle.sin_cos();
    GrayImage::from_fn(img.height(), img.width(), |r, col| {
        let (y, x) = (r as f64 - cy - shift[0], col as f64 - cx - shift[1]);
        let sy = (c * y - s * x) / scale + cy;
        let sx = (s * y + c * x) / scale + cx;
        sample(img, sy, sx)
    })
    .expect("finite")
}

fn c6_beyond_h0() -> Outcome {
    let run = || -> Result<(usize, usize, usize), drcdt::Error> {
        let (h, w, classes, per_cluster) = (32, 32, 6, 15);
        let ex = FeatureExtractor::new(FeatureConfig::new(h, w))?;
        let range = Interval::new(30.0, 180.0)?;
        let templates = (0..classes)
            .map(|c| smooth_texture(600 + c as u64, h, w, range))
            .collect::<Result<Vec<_>>>()?;
        // Cluster centres: the template itself, and a 20° rotation with 15%
        // zoom. Neither is reachable from the other by an intensity change.
        let centres = [(0.0f64, 1.0f64), (20f64.to_radians(), 1.15)];
        let mut one = Vec::new();
        let mut two = Vec::new();
        for (c, t) in templates.iter().enumerate() {
            let label = format!("s{c}");
            let f0 = ex.extract(&warp(t, centres[0].0, centres[0].1, [0.0, 0.0]))?;
            let f1 = ex.extract(&warp(t, centres[1].0, centres[1].1, [0.0, 0.0]))?;
            one.push((label.clone(), f0.clone()));
            two.push((label.clone(), f0));
            two.push((label, f1));
        }
        let m1 = train_model(&one, RankRule::default())?;
        let m2 = train_model(&two, RankRule::default())?;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut c1, mut c2, mut total) = (0, 0, 0);
        for (c, t) in templates.iter().enumerate() {
            for &(angle, scale) in &centres {
                for _ in 0..per_cluster {
                    let img = warp(
                        t,
                        angle + rng.gen_range(-2f64..2.0).to_radians(),
                        scale * rng.gen_range(0.98..1.02),
                        [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)],
                    );
                    let p = GlobalIlluminationParams::new(
                        rng.gen_range(0.7..1.5),
                        rng.gen_range(0.0..10.0),
                        [rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)],
                    )?;
                    let lit = apply_global_illumination(&img, &p)?.image;
                    let f = ex.extract(&lit)?;
                    c1 += usize::from(classify(&f, &m1)?.predicted == c);
                    c2 += usize::from(classify(&f, &m2)?.predicted == c);
                    total += 1;
                }
            }
        }
        Ok((c1, c2, total))
    };
    let (c1, c2, total) = run().map_err(|e| e.to_string())?;
    check(
        c2 >= c1,
        format!("accuracy L=1 {c1}/{total}, L=2 {c2}/{total} (need L=2 >= L=1)"),
    )
}

fn c7_metric_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let range = Interval::new(-10.0, 10.0).unwrap();
    let (mut asym, mut negative, mut worst_excess) = (0, 0, f64::NEG_INFINITY);
    for i in 0..200u64 {
        let n = rng.gen_range(1..=32);
        let g = AngleGrid::new([2, 4, 8][rng.gen_range(0..3)]).unwrap();
        let [a, b, c] = [0u64, 1, 2].map(|k| {
            discrete_rcdt(
                &random_distribution_2d(70_000 + 3 * i + k, n, range).unwrap(),
                &g,
            )
        });
        let ab = sliced_wasserstein(&a, &b).unwrap();
        let ba = sliced_wasserstein(&b, &a).unwrap();
        let bc = sliced_wasserstein(&b, &c).unwrap();
        let ac = sliced_wasserstein(&a, &c).unwrap();
        asym += usize::from(ab != ba);
        negative += usize::from(ab < 0.0 || bc < 0.0 || ac < 0.0);
        worst_excess = worst_excess.max(ac - ab - bc);
    }
    check(
        asym == 0 && negative == 0 && worst_excess <= 1e-12,
        format!(
            "200 triples: {asym} asymmetric, {negative} negative, max triangle excess {worst_excess:.2e} (slack 1e-12)"
        ),
    )
}

fn c8_determinism_and_persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = || -> Result<String, Box<dyn std::error::Error>> {
        let (h, w) = (24, 20);
        let range = Interval::new(20.0, 200.0)?;
        let mut csv = String::from("path,label,split\n");
        let mut templates = Vec::new();
        for c in 0..5u64 {
            let img = smooth_texture(800 + c, h, w, range)?;
            let img = GrayImage::new(h, w, img.pixels().iter().map(|p| p.round()).collect())?;
            let name = format!("s{c}.pgm");
            save_pgm(&img, 255, dir.path().join(&name))?;
            csv.push_str(&format!("{name},s{c},train\n"));
            templates.push(img);
        }
        let manifest = dir.path().join("manifest.csv");
        fs::write(&manifest, csv)?;
        let args = |name: &str| TrainArgs {
            manifest: manifest.clone(),
            model: dir.path().join(name),
            features: FeatureArgs {
                cell: 4,
                overlap: 2,
                angles: 8,
                variance: 0.99,
                components: None,
                log_transform: false,
                interior_only: false,
            },
        };
        cmd_train(&args("m1"))?;
        cmd_train(&args("m2"))?;
        let read = |name: &str| fs::read(archive_paths(dir.path().join(name)).1);
        let identical = read("m1")? == read("m2")?;

        let ex = FeatureExtractor::new(FeatureConfig::new(h, w))?;
        let train = templates
            .iter()
            .enumerate()
            .map(|(c, t)| Ok((format!("s{c}"), ex.extract(t)?)))
            .collect::<Result<Vec<_>>>()?;
        let model = train_model(&train, RankRule::default())?;
        let path = dir.path().join("roundtrip");
        save_model(&model, &path)?;
        let loaded = load_model(&path)?;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut same = 0;
        for i in 0..20 {
            let p = GlobalIlluminationParams::new(
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.0..20.0),
                [1.0, 0.5],
            )?;
            let img = apply_global_illumination(&templates[i % 5], &p)?.image;
            let f = ex.extract(&img)?;
            same += usize::from(classify(&f, &model)? == classify(&f, &loaded)?);
        }
        if identical && same == 20 {
            Ok(
                "model blobs byte-identical; 20/20 classify outputs identical after save/load"
                    .to_string(),
            )
        } else {
            Err(
                format!("blobs identical: {identical}; {same}/20 classify outputs identical")
                    .into(),
            )
        }
    };
    run().map_err(|e| e.to_string())
}

fn c9_performance() -> Outcome {
    let (h, w, classes) = (192, 168, 38);
    single_threaded(|| {
        let setup = Instant::now();
        let ex = FeatureExtractor::new(FeatureConfig::new(h, w)).map_err(|e| e.to_string())?;
        let range = Interval::new(10.0, 220.0).unwrap();
        let train = (0..classes)
            .map(|c| {
                let img = smooth_texture(900 + c as u64, h, w, range)?;
                Ok((format!("s{c:02}"), ex.extract(&img)?))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let model = train_model(&train, RankRule::default()).map_err(|e| e.to_string())?;
        drop(train);
        let setup = setup.elapsed();
        let probe = smooth_texture(917, h, w, range).unwrap();
        let once = || {
            let start = Instant::now();
            let f = ex.extract(&probe).expect("extract");
            let r = classify(&f, &model).expect("classify");
            (start.elapsed(), r.predicted)
        };
        let (_, predicted) = once(); // warm-up
        let mut times: Vec<Duration> = (0..5).map(|_| once().0).collect();
        times.sort();
        let median = times[2];
        check(
            median <= Duration::from_millis(500) && predicted == 17,
            format!(
                "C={classes}, K={}, {h}x{w}: extract+classify median {:.1} ms over 5 runs (min {:.1}, max {:.1}; limit 500 ms), single thread; model built in {:.1}s",
                model.num_patches(),
                median.as_secs_f64() * 1e3,
                times[0].as_secs_f64() * 1e3,
                times[4].as_secs_f64() * 1e3,
                setup.as_secs_f64()
            ),
        )
    })
}

fn c10_yale_b() -> Status {
    let Ok(manifest) = std::env::var("DRCDT_YALEB_MANIFEST") else {
        return Status::Skip("DRCDT_YALEB_MANIFEST not set; dataset absent".into());
    };
    let split = std::env::var("DRCDT_YALEB_TEST_SPLIT").unwrap_or_else(|_| "subset4".into());
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return Status::Fail(e.to_string()),
    };
    let model = dir.path().join("yaleb");
    let manifest = Path::new(&manifest).to_path_buf();
    let train = TrainArgs {
        manifest: manifest.clone(),
        model: model.clone(),
        features: FeatureArgs {
            cell: drcdt::features::DEFAULT_CELL,
            overlap: drcdt::features::DEFAULT_OVERLAP,
            angles: drcdt::features::DEFAULT_ANGLES,
            variance: 0.99,
            components: None,
            log_transform: false,
            interior_only: false,
        },
    };
    if let Err(e) = cmd_train(&train) {
        return Status::Fail(format!("training failed: {e}"));
    }
    match cmd_evaluate(&EvaluateArgs {
        split: split.clone(),
        manifest,
        model,
    }) {
        Ok(r) => {
            let acc = 100.0 * r.accuracy;
            let detail = format!(
                "{split}: {acc:.1}% ({}/{}), reference 91.8% +/- 5 points",
                r.correct, r.total
            );
            if (acc - 91.8).abs() <= 5.0 {
                Status::Pass(detail)
            } else {
                Status::Fail(detail)
            }
        }
        Err(e) => Status::Fail(format!("evaluation failed: {e}")),
    }
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        (
            "1 sorting equals assignment",
            Box::new(|| c1_sorting_assignment().into()),
        ),
        ("2 composition", Box::new(|| c2_composition().into())),
        (
            "3 affine covariance",
            Box::new(|| c3_affine_covariance().into()),
        ),
        ("4 convexity", Box::new(|| c4_convexity().into())),
        (
            "5 zero-distance classification",
            Box::new(|| c5_zero_distance_classification().into()),
        ),
        ("6 learning beyond H0", Box::new(|| c6_beyond_h0().into())),
        (
            "7 sliced-Wasserstein metric axioms",
            Box::new(|| c7_metric_axioms().into()),
        ),
        (
            "8 determinism and persistence",
            Box::new(|| c8_determinism_and_persistence().into()),
        ),
        ("9 performance", Box::new(|| c9_performance().into())),
        ("10 Extended Yale B (optional)", Box::new(c10_yale_b)),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let status = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Status::Fail("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match status {
            Status::Pass(d) => println!("PASS criterion {name}: {d} [{secs:.2}s]"),
            Status::Skip(d) => println!("SKIP criterion {name}: {d}"),
            Status::Fail(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d} [{secs:.2}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

impl From<Outcome> for Status {
    fn from(o: Outcome) -> Self {
        match o {
            Ok(d) => Status::Pass(d),
            Err(d) => Status::Fail(d),
        }
    }
}
