//! Uniform-mass discrete measures on the line and the plane, the discrete
//! CDT (sorting) and its sliced 2D counterpart, push-forwards, and the
//! Wasserstein / sliced-Wasserstein distances built on them.
//!
//! Two normalization conventions coexist and are kept as-is:
//!
//! * [`wasserstein_1d`] carries the `1/N` mass factor, so it is the true
//!   2-Wasserstein distance between the two measures.
//! * [`sliced_wasserstein`] is the plain Euclidean norm of the stacked
//!   transforms, with no `1/N` and no angular quadrature weight. It differs
//!   from the integral over `[0, π)` by the constant `sqrt(π/m)`, which never
//!   changes an argmin.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N` points on the real line, each carrying mass `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution1D {
    points: Vec<f64>,
}

impl Distribution1D {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("a distribution needs at least one point"));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("support point {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `N` points in the plane, each carrying mass `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution2D {
    points: Vec<[f64; 2]>,
}

impl Distribution2D {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("a distribution needs at least one point"));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(Error::invalid(format!("support point {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sorted support of a [`Distribution1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct CdtVector {
    values: Vec<f64>,
}

impl CdtVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Unit vector `(cos θ, sin θ)`. The axis angles `0` and `π/2` map to exact
/// unit vectors so that axis-aligned projections carry no rounding residue.
pub fn direction(theta: f64) -> [f64; 2] {
    if theta == 0.0 {
        [1.0, 0.0]
    } else if theta == FRAC_PI_2 {
        [0.0, 1.0]
    } else {
        [theta.cos(), theta.sin()]
    }
}

/// Uniform, endpoint-exclusive angle grid `θ_i = iπ/m`, `i = 0..m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AngleGridRepr", into = "AngleGridRepr")]
pub struct AngleGrid {
    angles: Vec<f64>,
    directions: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct AngleGridRepr {
    count: usize,
}

impl TryFrom<AngleGridRepr> for AngleGrid {
    type Error = Error;
    fn try_from(r: AngleGridRepr) -> Result<Self> {
        AngleGrid::new(r.count)
    }
}

impl From<AngleGrid> for AngleGridRepr {
    fn from(g: AngleGrid) -> Self {
        AngleGridRepr { count: g.len() }
    }
}

impl AngleGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("angle grid needs at least one angle"));
        }
        // PI * (i/m) hits FRAC_PI_2 exactly when 2i == m.
        let angles: Vec<f64> = (0..m).map(|i| PI * (i as f64 / m as f64)).collect();
        let directions = angles.iter().map(|&t| direction(t)).collect();
        Ok(Self { angles, directions })
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// `w_θ` for angle index `j`.
    pub fn direction(&self, j: usize) -> [f64; 2] {
        self.directions[j]
    }

    pub fn directions(&self) -> &[[f64; 2]] {
        &self.directions
    }
}

/// `N × m` matrix of sorted projections, stored column-major so that the
/// storage order is exactly the flattened feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RcdtRepresentation {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RcdtRepresentation {
    /// Rebuilds a representation from its flattened form. Every column must
    /// be nondecreasing.
    pub fn unflatten(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("representation must be at least 1x1"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values ({rows}x{cols})", rows * cols),
                found: format!("{} values", data.len()),
            });
        }
        for (j, col) in data.chunks_exact(rows).enumerate() {
            if col.windows(2).any(|w| !(w[0] <= w[1])) {
                return Err(Error::invalid(format!("column {j} is not sorted")));
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Number of support points `N`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of angles `m`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    /// Column-major view: all `N` entries of angle 0, then angle 1, and so on.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Sends a 1D measure to its sorted support vector.
pub fn discrete_cdt(d: &Distribution1D) -> CdtVector {
    let mut values = d.points.clone();
    values.sort_unstable_by(f64::total_cmp);
    CdtVector { values }
}

/// 2-Wasserstein distance between two equal-size uniform measures,
/// `sqrt((1/N) Σ (ã_i − b̃_i)²)` over the sorted supports.
pub fn wasserstein_1d(a: &Distribution1D, b: &Distribution1D) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} points", a.len()),
            found: format!("{} points", b.len()),
        });
    }
    let sa = discrete_cdt(a);
    let sb = discrete_cdt(b);
    let sum: f64 = sa
        .values
        .iter()
        .zip(&sb.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Projects every point onto `w_θ`, preserving point order.
pub fn project(d: &Distribution2D, theta: f64) -> Distribution1D {
    project_onto(d, direction(theta))
}

fn project_onto(d: &Distribution2D, w: [f64; 2]) -> Distribution1D {
    Distribution1D {
        points: d.points.iter().map(|z| z[0] * w[0] + z[1] * w[1]).collect(),
    }
}

/// Column `j` is the discrete CDT of the projection onto `θ_j`.
pub fn discrete_rcdt(d: &Distribution2D, grid: &AngleGrid) -> RcdtRepresentation {
    let rows = d.len();
    let mut data = Vec::with_capacity(rows * grid.len());
    for &w in grid.directions() {
        let start = data.len();
        data.extend(d.points.iter().map(|z| z[0] * w[0] + z[1] * w[1]));
        data[start..].sort_unstable_by(f64::total_cmp);
    }
    RcdtRepresentation {
        rows,
        cols: grid.len(),
        data,
    }
}

/// Column-major flattening of length `N·m`.
pub fn flatten(r: &RcdtRepresentation) -> Vec<f64> {
    r.data.clone()
}

/// Euclidean norm of the difference of the flattened transforms.
pub fn sliced_wasserstein(a: &RcdtRepresentation, b: &RcdtRepresentation) -> Result<f64> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", a.rows, a.cols),
            found: format!("{}x{}", b.rows, b.cols),
        });
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Isotropic scaling plus translation `z ↦ αz + b`, `α > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDeformation {
    alpha: f64,
    b: [f64; 2],
}

impl AffineDeformation {
    pub fn new(alpha: f64, b: [f64; 2]) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
        }
        if !(b[0].is_finite() && b[1].is_finite()) {
            return Err(Error::invalid("offset must be finite"));
        }
        Ok(Self { alpha, b })
    }

    pub fn identity() -> Self {
        Self {
            alpha: 1.0,
            b: [0.0, 0.0],
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn offset(&self) -> [f64; 2] {
        self.b
    }

    pub fn apply(&self, z: [f64; 2]) -> [f64; 2] {
        [self.alpha * z[0] + self.b[0], self.alpha * z[1] + self.b[1]]
    }

    /// `λ h₁ + (1−λ) h₂`, again a member of the family for `λ ∈ [0, 1]`.
    pub fn convex_combination(h1: &Self, h2: &Self, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
        }
        let mu = 1.0 - lambda;
        Self::new(
            lambda * h1.alpha + mu * h2.alpha,
            [
                lambda * h1.b[0] + mu * h2.b[0],
                lambda * h1.b[1] + mu * h2.b[1],
            ],
        )
    }
}

/// Strictly increasing piecewise-linear map `ℝ → ℝ`, linearly extended past
/// its first and last knots.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneMap1D {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneMap1D {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::invalid(
                "a piecewise-linear map needs at least two knots and one value per knot",
            ));
        }
        if knots.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::invalid("knots and values must be finite"));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("knots must be strictly increasing"));
        }
        let slopes: Vec<f64> = knots
            .windows(2)
            .zip(values.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .collect();
        if slopes.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("map is not strictly increasing"));
        }
        Ok(Self {
            knots,
            values,
            slopes,
        })
    }

    /// `x ↦ scale·x + offset`.
    pub fn affine(scale: f64, offset: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], vec![offset, scale + offset])
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluates the map. Rounded evaluation is nondecreasing across knots:
    /// each segment's value is capped at the next knot's value.
    pub fn eval(&self, x: f64) -> f64 {
        let last = self.knots.len() - 1;
        if x < self.knots[0] {
            return self.values[0] + (x - self.knots[0]) * self.slopes[0];
        }
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        if i == last {
            return self.values[last] + (x - self.knots[last]) * self.slopes[last - 1];
        }
        let y = self.values[i] + (x - self.knots[i]) * self.slopes[i];
        y.min(self.values[i + 1])
    }

    /// Pointwise `λ·T₁ + (1−λ)·T₂` as a piecewise-linear map on the merged
    /// knot set.
    pub fn convex_combination(t1: &Self, t2: &Self, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
        }
        let mut knots: Vec<f64> = t1.knots.iter().chain(&t2.knots).copied().collect();
        knots.sort_unstable_by(f64::total_cmp);
        knots.dedup();
        let values = knots
            .iter()
            .map(|&x| lambda * t1.eval(x) + (1.0 - lambda) * t2.eval(x))
            .collect();
        Self::new(knots, values)
    }
}

/// `{T(z_i)}` in source order.
pub fn push_forward_1d(d: &Distribution1D, t: &MonotoneMap1D) -> Distribution1D {
    Distribution1D {
        points: d.points.iter().map(|&z| t.eval(z)).collect(),
    }
}

/// `{α z_i + b}` in source order.
pub fn push_forward_affine_2d(d: &Distribution2D, h: &AffineDeformation) -> Distribution2D {
    Distribution2D {
        points: d.points.iter().map(|&z| h.apply(z)).collect(),
    }
}
