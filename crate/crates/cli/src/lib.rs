//! `drcdt` command-line front end. Every command writes one JSON document to
//! standard output and a short human summary to standard error.
//!
//! Exit codes: 0 success, 1 failed self-test, 2 usage or input error.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use drcdt::io::{
    archive_paths, load_image, load_manifest, load_model, load_pgm, save_model, save_pgm,
    DatasetManifest,
};
use drcdt::oracle::{run_property_suite, PropertyReport};
use drcdt::{
    apply_global_illumination, classify, sample_illumination, train_model, FeatureConfig,
    FeatureExtractor, GlobalIlluminationParams, GrayImage, Interval, PixelSelection, RankRule,
    SamplingRanges, TrainedModel,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "drcdt",
    version,
    about = "Illumination-robust face recognition with sliced transport features"
)]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from the `train` split of a manifest.
    Train(TrainArgs),
    /// Classify one image.
    Predict(PredictArgs),
    /// Accuracy, confusion counts and margins on a manifest split.
    Evaluate(EvaluateArgs),
    /// Write globally re-illuminated copies of an image.
    Augment(AugmentArgs),
    /// Run the seeded property suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    #[arg(long, default_value_t = drcdt::features::DEFAULT_CELL)]
    pub cell: usize,
    #[arg(long, default_value_t = drcdt::features::DEFAULT_OVERLAP)]
    pub overlap: usize,
    /// Number of projection angles m.
    #[arg(long, default_value_t = drcdt::features::DEFAULT_ANGLES)]
    pub angles: usize,
    /// Fraction of residual energy kept per subspace, in (0, 1].
    #[arg(long, default_value_t = 0.99)]
    pub variance: f64,
    /// Keep exactly this many directions beyond the deformation pair
    /// (overrides --variance).
    #[arg(long)]
    pub components: Option<usize>,
    /// Apply ln(1 + I) before the gradient.
    #[arg(long)]
    pub log_transform: bool,
    /// Use only pixels whose gradient stencil stays inside their patch.
    #[arg(long)]
    pub interior_only: bool,
}

impl FeatureArgs {
    pub fn config(&self, height: usize, width: usize) -> FeatureConfig {
        FeatureConfig {
            height,
            width,
            cell: self.cell,
            overlap: self.overlap,
            angles: self.angles,
            log_transform: self.log_transform,
            pixels: if self.interior_only {
                PixelSelection::StencilInterior
            } else {
                PixelSelection::All
            },
        }
    }

    pub fn rank_rule(&self) -> RankRule {
        match self.components {
            Some(n) => RankRule::Components(n),
            None => RankRule::VarianceKeep(self.variance),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.cell < 2 {
            return Err(CliError::usage(format!(
                "--cell must be >= 2, got {}",
                self.cell
            )));
        }
        if self.overlap >= self.cell {
            return Err(CliError::usage(format!(
                "--overlap must be < --cell ({}), got {}",
                self.cell, self.overlap
            )));
        }
        if self.angles == 0 {
            return Err(CliError::usage("--angles must be >= 1"));
        }
        if !(self.variance > 0.0 && self.variance <= 1.0) {
            return Err(CliError::usage(format!(
                "--variance must lie in (0, 1], got {}",
                self.variance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output archive name; writes `<model>.json` and `<model>.bin`.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    pub image: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Include d_k^c for every class and patch.
    #[arg(long)]
    pub per_patch_distances: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    pub split: String,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AugmentArgs {
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "0.1:3")]
    pub alpha_range: Interval,
    #[arg(long, default_value = "1:30")]
    pub beta_range: Interval,
    /// Range for each component of b.
    #[arg(long, default_value = "0.1:3")]
    pub b_range: Interval,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    pub trials: u32,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<drcdt::Error> for CliError {
    fn from(e: drcdt::Error) -> Self {
        CliError::usage(e.to_string())
    }
}

/// Parses `args` (including the program name), runs the command, prints its
/// output and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if cli.threads > 0 {
        // Fails only if a pool already exists, e.g. when called twice in one
        // process; the existing pool is then reused.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match dispatch(&cli.command) {
        Ok(out) => {
            println!("{}", out.json);
            eprintln!("{}", out.summary);
            out.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub struct Output {
    pub json: String,
    pub summary: String,
    pub code: i32,
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize")
}

pub fn dispatch(command: &Command) -> Result<Output, CliError> {
    match command {
        Command::Train(a) => {
            let s = cmd_train(a)?;
            let summary = format!(
                "trained {} classes x {} patches (ranks {}..={}) in {:.2}s -> {}",
                s.classes,
                s.patches,
                s.min_rank,
                s.max_rank,
                s.wall_seconds,
                s.model_json.display()
            );
            Ok(Output {
                json: to_json(&s),
                summary,
                code: EXIT_OK,
            })
        }
        Command::Predict(a) => {
            let p = cmd_predict(a)?;
            let summary = format!("{} -> {}", a.image.display(), p.predicted);
            Ok(Output {
                json: to_json(&p),
                summary,
                code: EXIT_OK,
            })
        }
        Command::Evaluate(a) => {
            let r = cmd_evaluate(a)?;
            let summary = format!(
                "split {}: {}/{} correct ({:.2}%)",
                r.split,
                r.correct,
                r.total,
                100.0 * r.accuracy
            );
            Ok(Output {
                json: to_json(&r),
                summary,
                code: EXIT_OK,
            })
        }
        Command::Augment(a) => {
            let r = cmd_augment(a)?;
            let summary = format!("wrote {} images to {}", r.outputs.len(), a.out.display());
            Ok(Output {
                json: to_json(&r),
                summary,
                code: EXIT_OK,
            })
        }
        Command::Selftest(a) => {
            let r = cmd_selftest(a)?;
            let failed: Vec<&str> = r
                .properties
                .iter()
                .filter(|p| !p.passed)
                .map(|p| p.name)
                .collect();
            let summary = if failed.is_empty() {
                format!(
                    "{} properties x {} trials: all passed",
                    r.properties.len(),
                    r.trials
                )
            } else {
                format!("FAILED: {}", failed.join(", "))
            };
            let code = if r.passed { EXIT_OK } else { EXIT_FAILURE };
            Ok(Output {
                json: to_json(&r),
                summary,
                code,
            })
        }
    }
}

fn describe_splits(m: &DatasetManifest) -> String {
    let names: Vec<&str> = m.split_names().into_iter().collect();
    if names.is_empty() {
        "the manifest has no rows".into()
    } else {
        format!("available splits: {}", names.join(", "))
    }
}

/// Loads every image in order, in parallel, and checks they share one shape.
fn load_split(m: &DatasetManifest, split: &str) -> Result<Vec<(String, GrayImage)>, CliError> {
    let rows = m.split(split);
    if rows.is_empty() {
        return Err(CliError::usage(format!(
            "split {split:?} is empty or unknown; {}",
            describe_splits(m)
        )));
    }
    let images = rows
        .par_iter()
        .map(|r| load_image(m.resolve(r)).map(|img| (r.label.clone(), img)))
        .collect::<Result<Vec<_>, _>>()?;
    let (h, w) = (images[0].1.height(), images[0].1.width());
    let offenders: Vec<String> = rows
        .iter()
        .zip(&images)
        .filter(|(_, (_, img))| (img.height(), img.width()) != (h, w))
        .map(|(r, (_, img))| format!("{} is {}x{}", r.path.display(), img.height(), img.width()))
        .collect();
    if !offenders.is_empty() {
        return Err(CliError::usage(format!(
            "images must share one size; {} is {h}x{w} but {}",
            rows[0].path.display(),
            offenders.join(", ")
        )));
    }
    Ok(images)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub classes: usize,
    pub labels: Vec<String>,
    pub patches: usize,
    pub images: usize,
    pub feature_config: FeatureConfig,
    pub rank_rule: RankRule,
    pub min_rank: usize,
    pub max_rank: usize,
    /// Largest subspace rank over classes, per patch.
    pub max_rank_per_patch: Vec<usize>,
    pub wall_seconds: f64,
    pub model_json: PathBuf,
    pub model_bin: PathBuf,
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainSummary, CliError> {
    a.features.validate()?;
    let start = Instant::now();
    let manifest = load_manifest(&a.manifest)?;
    let images = load_split(&manifest, "train")?;
    let (h, w) = (images[0].1.height(), images[0].1.width());
    let ex = FeatureExtractor::new(a.features.config(h, w))?;
    let samples = images
        .par_iter()
        .map(|(label, img)| ex.extract(img).map(|f| (label.clone(), f)))
        .collect::<Result<Vec<_>, _>>()?;
    let model = train_model(&samples, a.features.rank_rule())?;
    save_model(&model, &a.model)?;
    let (model_json, model_bin) = archive_paths(&a.model);

    let k = model.num_patches();
    let max_rank_per_patch: Vec<usize> = (0..k)
        .map(|p| {
            (0..model.num_classes())
                .map(|c| model.subspace(c, p).rank())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let all_ranks = model
        .classes()
        .iter()
        .flat_map(|c| c.subspaces.iter().map(|s| s.rank()));
    let (min_rank, max_rank) =
        all_ranks.fold((usize::MAX, 0), |(lo, hi), r| (lo.min(r), hi.max(r)));
    Ok(TrainSummary {
        classes: model.num_classes(),
        labels: model.labels().into_iter().map(String::from).collect(),
        patches: k,
        images: images.len(),
        feature_config: model.config().clone(),
        rank_rule: model.rank_rule(),
        min_rank,
        max_rank,
        max_rank_per_patch,
        wall_seconds: start.elapsed().as_secs_f64(),
        model_json,
        model_bin,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RankedClass {
    pub label: String,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    pub image: PathBuf,
    pub predicted: String,
    /// Every class, nearest first.
    pub ranking: Vec<RankedClass>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_distances: Option<Vec<Vec<f64>>>,
}

fn check_shape(img: &GrayImage, model: &TrainedModel, path: &Path) -> Result<(), CliError> {
    let cfg = model.config();
    if (img.height(), img.width()) != (cfg.height, cfg.width) {
        return Err(CliError::usage(format!(
            "{} is {}x{} but the model expects {}x{} (height x width)",
            path.display(),
            img.height(),
            img.width(),
            cfg.height,
            cfg.width
        )));
    }
    Ok(())
}

pub fn cmd_predict(a: &PredictArgs) -> Result<Prediction, CliError> {
    let model = load_model(&a.model)?;
    let img = load_image(&a.image)?;
    check_shape(&img, &model, &a.image)?;
    let ex = FeatureExtractor::new(model.config().clone())?;
    let r = classify(&ex.extract(&img)?, &model)?;
    let labels = model.labels();
    let mut ranking: Vec<RankedClass> = labels
        .iter()
        .zip(&r.distances)
        .map(|(l, &d)| RankedClass {
            label: l.to_string(),
            distance: d,
        })
        .collect();
    // Stable sort keeps label order among equal distances.
    ranking.sort_by(|x, y| x.distance.total_cmp(&y.distance));
    Ok(Prediction {
        image: a.image.clone(),
        predicted: r.label,
        ranking,
        patch_distances: a.per_patch_distances.then_some(r.patch_distances),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub split: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub labels: Vec<String>,
    /// `confusion[true][predicted]`, both in `labels` order.
    pub confusion: Vec<Vec<usize>>,
    /// Mean over images of `min_{c' ≠ c} d^{c'} − d^c`; null with one class.
    pub mean_margin: Option<f64>,
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<EvaluationReport, CliError> {
    let model = load_model(&a.model)?;
    let manifest = load_manifest(&a.manifest)?;
    let labels: Vec<String> = model.labels().into_iter().map(String::from).collect();
    let rows = manifest.split(&a.split);
    if rows.is_empty() {
        return Err(CliError::usage(format!(
            "split {:?} is empty or unknown; {}",
            a.split,
            describe_splits(&manifest)
        )));
    }
    let truth = rows
        .iter()
        .map(|r| {
            labels.binary_search(&r.label).map_err(|_| {
                CliError::usage(format!(
                    "{} has label {:?}, which the model was not trained on",
                    r.path.display(),
                    r.label
                ))
            })
        })
        .collect::<Result<Vec<usize>, _>>()?;
    let ex = FeatureExtractor::new(model.config().clone())?;
    let results = rows
        .par_iter()
        .map(|r| {
            let path = manifest.resolve(r);
            let img = load_image(&path)?;
            check_shape(&img, &model, &r.path)?;
            Ok(classify(&ex.extract(&img)?, &model)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let c = labels.len();
    let mut confusion = vec![vec![0usize; c]; c];
    let mut correct = 0;
    let mut margins = Vec::with_capacity(results.len());
    for (r, &t) in results.iter().zip(&truth) {
        confusion[t][r.predicted] += 1;
        correct += usize::from(r.predicted == t);
        let nearest_wrong = (0..c)
            .filter(|&o| o != t)
            .map(|o| r.distances[o])
            .fold(f64::INFINITY, f64::min);
        if nearest_wrong.is_finite() {
            margins.push(nearest_wrong - r.distances[t]);
        }
    }
    let mean_margin =
        (!margins.is_empty()).then(|| margins.iter().sum::<f64>() / margins.len() as f64);
    Ok(EvaluationReport {
        split: a.split.clone(),
        total: results.len(),
        correct,
        accuracy: correct as f64 / results.len() as f64,
        labels,
        confusion,
        mean_margin,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AugmentedImage {
    pub file: PathBuf,
    pub index: usize,
    pub params: GlobalIlluminationParams,
    pub maxval: u16,
    /// Pixels clamped at zero.
    pub clamped: usize,
    /// Pixels clamped at maxval when written.
    pub saturated: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AugmentLog {
    pub source: PathBuf,
    pub seed: u64,
    pub alpha_range: Interval,
    pub beta_range: Interval,
    pub b_range: Interval,
    pub outputs: Vec<AugmentedImage>,
}

pub fn cmd_augment(a: &AugmentArgs) -> Result<AugmentLog, CliError> {
    let src = load_pgm(&a.image)?;
    let ranges = SamplingRanges {
        alpha: a.alpha_range,
        beta: a.beta_range,
        b_x: a.b_range,
        b_y: a.b_range,
        seed: a.seed,
    };
    let params = sample_illumination(&ranges, a.count)?;
    fs::create_dir_all(&a.out)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", a.out.display())))?;
    let stem = a
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());

    let mut outputs = Vec::with_capacity(params.len());
    for (i, p) in params.into_iter().enumerate() {
        let lit = apply_global_illumination(&src.image, &p)?;
        let peak = lit.image.max_value().ceil().min(65535.0) as u16;
        let maxval = src.maxval.max(peak);
        let file = a.out.join(format!("{stem}_aug{i:04}.pgm"));
        let saturated = save_pgm(&lit.image, maxval, &file)?;
        outputs.push(AugmentedImage {
            file,
            index: i,
            params: p,
            maxval,
            clamped: lit.clamped,
            saturated,
        });
    }
    let log = AugmentLog {
        source: a.image.clone(),
        seed: a.seed,
        alpha_range: a.alpha_range,
        beta_range: a.beta_range,
        b_range: a.b_range,
        outputs,
    };
    let log_path = a.out.join(format!("{stem}_augment.json"));
    fs::write(&log_path, to_json(&log))
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", log_path.display())))?;
    Ok(log)
}

pub fn cmd_selftest(a: &SelftestArgs) -> Result<PropertyReport, CliError> {
    Ok(run_property_suite(a.seed, a.trials as usize)?)
}
