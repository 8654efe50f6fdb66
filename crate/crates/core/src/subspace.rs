//! Per-class, per-patch linear subspaces in flattened R-CDT space and
//! nearest-subspace classification.
//!
//! Each subspace is the span of a class's training features for one patch
//! together with the two deformation vectors `u1 = cos θ_j`, `u2 = sin θ_j`
//! (constant within each angle block). Adding `u1`, `u2` makes every
//! translated copy of a member reachable; the training features themselves
//! absorb scaling. The span is not mean-centered.
//!
//! Construction: the deformation vectors are orthonormalized first, the
//! training features are projected onto their orthogonal complement, and an
//! SVD of those residuals supplies the remaining directions, truncated by a
//! [`RankRule`]. Directions with singular value below `1e-10` times the
//! Frobenius norm of the full spanning set are treated as rounding noise.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureSet};
use crate::transport::AngleGrid;

/// Relative cutoff below which a direction is considered numerically zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// The flattened `cos θ` / `sin θ` vectors for patches of `n` points.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationSpanningSet {
    u1: Vec<f64>,
    u2: Vec<f64>,
}

impl DeformationSpanningSet {
    pub fn u1(&self) -> &[f64] {
        &self.u1
    }

    pub fn u2(&self) -> &[f64] {
        &self.u2
    }

    /// Vector length `N·m`.
    pub fn len(&self) -> usize {
        self.u1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u1.is_empty()
    }
}

pub fn build_spanning_set(g: &AngleGrid, n: usize) -> Result<DeformationSpanningSet> {
    if n == 0 {
        return Err(Error::invalid("points per patch must be >= 1"));
    }
    let mut u1 = Vec::with_capacity(n * g.len());
    let mut u2 = Vec::with_capacity(n * g.len());
    for w in g.directions() {
        u1.resize(u1.len() + n, w[0]);
        u2.resize(u2.len() + n, w[1]);
    }
    Ok(DeformationSpanningSet { u1, u2 })
}

/// How many training-derived directions to keep beyond `u1`, `u2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankRule {
    /// Smallest count whose squared singular values reach this fraction of
    /// the total. Must lie in `(0, 1]`.
    VarianceKeep(f64),
    /// A fixed number of directions (fewer if the data has lower rank).
    Components(usize),
}

impl Default for RankRule {
    fn default() -> Self {
        RankRule::VarianceKeep(0.99)
    }
}

impl RankRule {
    fn validate(&self) -> Result<()> {
        match *self {
            RankRule::VarianceKeep(v) if !(v > 0.0 && v <= 1.0) => Err(Error::invalid(format!(
                "variance fraction must lie in (0, 1], got {v}"
            ))),
            _ => Ok(()),
        }
    }

    fn keep(&self, sigma: &[f64]) -> usize {
        match *self {
            RankRule::Components(n) => n.min(sigma.len()),
            RankRule::VarianceKeep(v) => {
                let total: f64 = sigma.iter().map(|s| s * s).sum();
                let mut acc = 0.0;
                for (i, s) in sigma.iter().enumerate() {
                    acc += s * s;
                    if acc >= v * total {
                        return i + 1;
                    }
                }
                sigma.len()
            }
        }
    }
}

/// Orthonormal basis `B` (column-major, `dim × rank`).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPatchSubspace {
    dim: usize,
    rank: usize,
    basis: Vec<f64>,
}

impl SubjectPatchSubspace {
    /// Wraps an existing column-major basis. Orthonormality is not checked
    /// here; see [`SubjectPatchSubspace::orthonormality_error`].
    pub fn from_basis(dim: usize, rank: usize, basis: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("subspace dimension must be >= 1"));
        }
        if basis.len() != dim * rank {
            return Err(Error::DimensionMismatch {
                expected: format!("{} basis entries ({dim}x{rank})", dim * rank),
                found: format!("{}", basis.len()),
            });
        }
        Ok(Self { dim, rank, basis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.basis[j * self.dim..(j + 1) * self.dim]
    }

    /// `max |BᵀB − I|` entrywise.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rank {
            for j in 0..self.rank {
                let g = dot(self.column(i), self.column(j));
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// `B Bᵀ v`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let mut out = vec![0.0; self.dim];
        for j in 0..self.rank {
            let col = self.column(j);
            let c = dot(col, v);
            for (o, b) in out.iter_mut().zip(col) {
                *o += c * b;
            }
        }
        Ok(out)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: format!("vector of length {}", self.dim),
                found: format!("length {}", v.len()),
            });
        }
        Ok(())
    }

    fn residual_norm(&self, v: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend_from_slice(v);
        for j in 0..self.rank {
            let col = self.column(j);
            let c = dot(col, v);
            for (s, b) in scratch.iter_mut().zip(col) {
                *s -= c * b;
            }
        }
        scratch.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Removes the components of `v` along the orthonormal `columns`, twice
/// (classical Gram-Schmidt with reorthogonalization).
fn deflate(v: &mut [f64], columns: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in columns {
            let c = dot(q, v);
            for (x, y) in v.iter_mut().zip(q) {
                *x -= c * y;
            }
        }
    }
}

/// Appends `v` to the orthonormal set if its residual exceeds `tol`.
fn push_orthonormal(columns: &mut Vec<Vec<f64>>, mut v: Vec<f64>, tol: f64) {
    deflate(&mut v, columns);
    let n = norm(&v);
    if n > tol {
        v.iter_mut().for_each(|x| *x /= n);
        columns.push(v);
    }
}

/// `‖v − B Bᵀ v‖`.
pub fn subspace_distance(v: &[f64], s: &SubjectPatchSubspace) -> Result<f64> {
    s.check_len(v)?;
    Ok(s.residual_norm(v, &mut Vec::with_capacity(v.len())))
}

/// Singular values and left singular vectors of the matrix whose columns
/// are `cols`, largest first, by one-sided Jacobi rotations. Columns whose
/// norm vanishes come back with a zero vector.
fn left_singular_pairs(mut cols: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>)> {
    const MAX_SWEEPS: usize = 80;
    let n = cols.len();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let a = dot(&cols[i], &cols[i]);
                let b = dot(&cols[j], &cols[j]);
                let g = dot(&cols[i], &cols[j]);
                if g == 0.0 || g.abs() <= f64::EPSILON * (a * b).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (b - a) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(j);
                for (x, y) in lo[i].iter_mut().zip(hi[0].iter_mut()) {
                    let (xi, yj) = (*x, *y);
                    *x = c * xi - s * yj;
                    *y = s * xi + c * yj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = cols
        .into_iter()
        .map(|mut v| {
            let s = norm(&v);
            if s > 0.0 {
                v.iter_mut().for_each(|x| *x /= s);
            }
            (s, v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Learns the subspace for one (class, patch) from `L ≥ 1` flattened
/// training features.
pub fn train_subspace<V: AsRef<[f64]>>(
    features: &[V],
    span_set: &DeformationSpanningSet,
    rule: RankRule,
) -> Result<SubjectPatchSubspace> {
    rule.validate()?;
    if features.is_empty() {
        return Err(Error::invalid("at least one training feature is required"));
    }
    let dim = span_set.len();
    if let Some(i) = features.iter().position(|f| f.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: format!("feature length {dim}"),
            found: format!("feature {i} has length {}", features[i].as_ref().len()),
        });
    }
    if features
        .iter()
        .any(|f| f.as_ref().iter().any(|x| !x.is_finite()))
    {
        return Err(Error::invalid("training features must be finite"));
    }

    let frob = (features
        .iter()
        .map(|f| dot(f.as_ref(), f.as_ref()))
        .sum::<f64>()
        + dot(&span_set.u1, &span_set.u1)
        + dot(&span_set.u2, &span_set.u2))
    .sqrt();
    let tol = RANK_TOLERANCE * frob;

    let mut columns: Vec<Vec<f64>> = Vec::new();
    push_orthonormal(&mut columns, span_set.u1.clone(), tol);
    push_orthonormal(&mut columns, span_set.u2.clone(), tol);

    let residuals: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            let mut r = f.as_ref().to_vec();
            deflate(&mut r, &columns);
            r
        })
        .collect();

    let pairs = left_singular_pairs(residuals);
    let sigma: Vec<f64> = pairs.iter().map(|p| p.0).take_while(|&s| s > tol).collect();
    let keep = rule.keep(&sigma);
    for (_, u) in pairs.into_iter().take(keep) {
        push_orthonormal(&mut columns, u, 0.5);
    }

    let rank = columns.len();
    let basis = columns.into_iter().flatten().collect();
    SubjectPatchSubspace::from_basis(dim, rank, basis)
}

/// One class: its label and one subspace per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSubspaces {
    pub label: String,
    pub subspaces: Vec<SubjectPatchSubspace>,
}

/// `C × K` subspaces plus the feature configuration that produced them.
/// Classes are stored in ascending label order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    config: FeatureConfig,
    rank_rule: RankRule,
    classes: Vec<ClassSubspaces>,
}

impl TrainedModel {
    pub fn from_parts(
        config: FeatureConfig,
        rank_rule: RankRule,
        classes: Vec<ClassSubspaces>,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("a model needs at least one class"));
        }
        if classes.windows(2).any(|w| w[0].label >= w[1].label) {
            return Err(Error::invalid("class labels must be unique and ascending"));
        }
        let k = classes[0].subspaces.len();
        for c in &classes {
            if c.subspaces.len() != k {
                return Err(Error::invalid(format!(
                    "class {:?} has {} patch subspaces, expected {k}",
                    c.label,
                    c.subspaces.len()
                )));
            }
        }
        for p in 0..k {
            let dim = classes[0].subspaces[p].dim;
            if classes.iter().any(|c| c.subspaces[p].dim != dim) {
                return Err(Error::invalid(format!(
                    "patch {p} subspaces disagree on dimension"
                )));
            }
        }
        Ok(Self {
            config,
            rank_rule,
            classes,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn rank_rule(&self) -> RankRule {
        self.rank_rule
    }

    pub fn classes(&self) -> &[ClassSubspaces] {
        &self.classes
    }

    pub fn labels(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_patches(&self) -> usize {
        self.classes[0].subspaces.len()
    }

    pub fn subspace(&self, class: usize, patch: usize) -> &SubjectPatchSubspace {
        &self.classes[class].subspaces[patch]
    }
}

/// Trains every (class, patch) subspace from labelled feature sets. All
/// feature sets must share one configuration.
pub fn train_model(samples: &[(String, FeatureSet)], rule: RankRule) -> Result<TrainedModel> {
    rule.validate()?;
    let (_, first) = samples
        .first()
        .ok_or_else(|| Error::invalid("no training samples"))?;
    let config = first.config().clone();
    for (label, fs) in samples {
        if label.is_empty() {
            return Err(Error::invalid("class labels must be nonempty"));
        }
        let diff = config.diff(fs.config());
        if !diff.is_empty() {
            return Err(Error::ConfigMismatch(diff.join("; ")));
        }
    }
    let mut by_class: BTreeMap<&str, Vec<&FeatureSet>> = BTreeMap::new();
    for (label, fs) in samples {
        by_class.entry(label.as_str()).or_default().push(fs);
    }
    let angles = AngleGrid::new(config.angles)?;
    let k = first.len();
    let spans = first
        .patches()
        .iter()
        .map(|p| build_spanning_set(&angles, p.rows()))
        .collect::<Result<Vec<_>>>()?;

    let groups: Vec<(&str, Vec<&FeatureSet>)> = by_class.into_iter().collect();
    let jobs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|c| (0..k).map(move |p| (c, p)))
        .collect();
    let trained = jobs
        .par_iter()
        .map(|&(c, p)| {
            let feats: Vec<&[f64]> = groups[c]
                .1
                .iter()
                .map(|fs| fs.patches()[p].as_slice())
                .collect();
            train_subspace(&feats, &spans[p], rule)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut it = trained.into_iter();
    let classes = groups
        .iter()
        .map(|(label, _)| ClassSubspaces {
            label: label.to_string(),
            subspaces: it.by_ref().take(k).collect(),
        })
        .collect();
    TrainedModel::from_parts(config, rule, classes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationResult {
    /// Index of the predicted class in the model's label order.
    pub predicted: usize,
    pub label: String,
    /// `d^c = Σ_k d_k^c` per class, in model label order.
    pub distances: Vec<f64>,
    /// `d_k^c`, indexed `[class][patch]`.
    pub patch_distances: Vec<Vec<f64>>,
}

/// Nearest-subspace decision: `argmin_c Σ_k ‖v_k − B_k^c (B_k^c)ᵀ v_k‖`,
/// ties going to the lowest label.
pub fn classify(features: &FeatureSet, model: &TrainedModel) -> Result<ClassificationResult> {
    let diff = model.config.diff(features.config());
    if !diff.is_empty() {
        return Err(Error::ConfigMismatch(format!(
            "model vs features: {}",
            diff.join("; ")
        )));
    }
    if features.len() != model.num_patches() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} patches", model.num_patches()),
            found: format!("{} patches", features.len()),
        });
    }
    for (p, (feat, sub)) in features
        .patches()
        .iter()
        .zip(&model.classes[0].subspaces)
        .enumerate()
    {
        if feat.as_slice().len() != sub.dim {
            return Err(Error::DimensionMismatch {
                expected: format!("patch {p} feature length {}", sub.dim),
                found: format!("{}", feat.as_slice().len()),
            });
        }
    }

    let patch_distances: Vec<Vec<f64>> = model
        .classes
        .par_iter()
        .map(|class| {
            let mut scratch = Vec::new();
            features
                .patches()
                .iter()
                .zip(&class.subspaces)
                .map(|(f, s)| s.residual_norm(f.as_slice(), &mut scratch))
                .collect()
        })
        .collect();
    let distances: Vec<f64> = patch_distances.iter().map(|d| d.iter().sum()).collect();
    let predicted = argmin(&distances);
    Ok(ClassificationResult {
        predicted,
        label: model.classes[predicted].label.clone(),
        distances,
        patch_distances,
    })
}

/// First index of the minimum.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Picks the smallest component count (from `candidates`) that attains the
/// highest validation accuracy.
pub fn select_components(
    train: &[(String, FeatureSet)],
    validation: &[(String, FeatureSet)],
    candidates: &[usize],
) -> Result<usize> {
    if validation.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate ranks given"));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut best: Option<(usize, usize)> = None;
    for &n in &sorted {
        let model = train_model(train, RankRule::Components(n))?;
        for label in model.labels() {
            if !validation.iter().any(|(l, _)| l == label) {
                return Err(Error::invalid(format!(
                    "class {label:?} has no validation sample"
                )));
            }
        }
        let mut correct = 0;
        for (label, fs) in validation {
            if classify(fs, &model)?.label == *label {
                correct += 1;
            }
        }
        if !matches!(best, Some((_, c)) if correct <= c) {
            best = Some((n, correct));
        }
    }
    Ok(best.expect("nonempty candidates").0)
}
