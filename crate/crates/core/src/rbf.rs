//! Multiquadric radial basis function interpolation.
//!
//! The model is `s(x) = sum_i w_i * phi(eps * |x - c_i|)` with
//! `phi(r) = sqrt(1 + r^2)` and no polynomial tail. Weights solve
//! `(Phi + smooth * I) w = y`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition-number estimate above which the system is jittered.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Diagonal jitter, relative to `trace(Phi) / n`, applied to ill-conditioned systems.
pub const JITTER_FACTOR: f64 = 1e-10;
const RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kernel {
    Multiquadric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfModel {
    dim: usize,
    /// Row-major `n x dim`.
    centers: Vec<f64>,
    weights: Vec<f64>,
    epsilon: f64,
    smooth: f64,
    kernel: Kernel,
    /// Extra diagonal term added when the system was ill-conditioned.
    jitter: f64,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl RbfModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn centers(&self) -> impl Iterator<Item = &[f64]> {
        self.centers.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn smooth(&self) -> f64 {
        self.smooth
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Surrogate value at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.value(x))
    }

    /// Unchecked evaluation for hot loops; `x.len()` must equal [`RbfModel::dim`].
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let e2 = self.epsilon * self.epsilon;
        self.centers
            .chunks_exact(self.dim)
            .zip(&self.weights)
            .map(|(c, w)| w * (1.0 + e2 * sq_dist(x, c)).sqrt())
            .sum()
    }
}

/// Shape parameter from the data scale: `1 / mean nearest-neighbor distance`.
pub fn default_epsilon(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::arg("default epsilon needs at least 2 points"));
    }
    let n = points.len();
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let nearest = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| sq_dist(p, q))
            .fold(f64::INFINITY, f64::min);
        total += nearest.sqrt();
    }
    let mean = total / n as f64;
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::arg("default epsilon undefined: points coincide"));
    }
    Ok(1.0 / mean)
}

/// Shape parameter from the bounding box: `1 / (prod(edges) / n)^(1/k)`,
/// where the product runs over the `k` axes with a nonzero extent.
///
/// `(prod(edges) / n)^(1/k)` is the side of the cube each point would own if
/// the points filled their bounding box evenly, so the rule follows the
/// design's overall density and does not shrink when samples cluster.
pub fn box_spacing_epsilon(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::arg("box spacing epsilon needs at least 2 points"));
    }
    let d = points[0].len();
    let mut log_volume = 0.0;
    let mut k = 0;
    for axis in 0..d {
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[axis]), hi.max(p[axis])));
        if hi > lo {
            log_volume += (hi - lo).ln();
            k += 1;
        }
    }
    if k == 0 {
        return Err(Error::arg("box spacing epsilon undefined: points coincide"));
    }
    let spacing = ((log_volume - (points.len() as f64).ln()) / k as f64).exp();
    Ok(1.0 / spacing)
}

/// How a shape parameter is derived from the centers when none is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonRule {
    /// [`default_epsilon`].
    NearestNeighbor,
    /// [`box_spacing_epsilon`].
    #[default]
    BoxSpacing,
}

impl EpsilonRule {
    pub fn epsilon(self, points: &[Vec<f64>]) -> Result<f64> {
        match self {
            EpsilonRule::NearestNeighbor => default_epsilon(points),
            EpsilonRule::BoxSpacing => box_spacing_epsilon(points),
        }
    }
}

/// Fit a multiquadric RBF through `(points, values)`.
///
/// `epsilon = None` selects [`default_epsilon`]. With `smooth = 0` the model
/// interpolates. Systems whose estimated 1-norm condition number exceeds
/// [`CONDITION_LIMIT`] get a small diagonal jitter and a logged warning.
pub fn rbf_fit(points: &[Vec<f64>], values: &[f64], epsilon: Option<f64>, smooth: f64) -> Result<RbfModel> {
    let n = points.len();
    if n == 0 {
        return Err(Error::arg("RBF fit needs at least one point"));
    }
    if values.len() != n {
        return Err(Error::arg(format!("{n} points but {} values", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("RBF fit values must be finite"));
    }
    if !(smooth >= 0.0) || !smooth.is_finite() {
        return Err(Error::arg(format!("smooth must be >= 0, got {smooth}")));
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::arg("points must have at least one coordinate"));
    }
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::arg("RBF fit points must be finite"));
    }
    let epsilon = match epsilon {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(e) => return Err(Error::arg(format!("epsilon must be > 0, got {e}"))),
        None if n == 1 => 1.0,
        None => default_epsilon(points)?,
    };
    if smooth == 0.0 {
        for i in 0..n {
            for j in 0..i {
                if points[i] == points[j] {
                    return Err(Error::Singular(format!(
                        "duplicate centers {j} and {i} with smooth = 0"
                    )));
                }
            }
        }
    }

    let e2 = epsilon * epsilon;
    let mut phi = DMatrix::<f64>::from_fn(n, n, |i, j| (1.0 + e2 * sq_dist(&points[i], &points[j])).sqrt());
    for i in 0..n {
        phi[(i, i)] += smooth;
    }
    let y = DVector::from_column_slice(values);

    let mut jitter = 0.0;
    let mut lu = phi.clone().lu();
    if n > 1 {
        let cond = condition_estimate(&phi, &lu);
        if !(cond <= CONDITION_LIMIT) {
            jitter = JITTER_FACTOR * phi.trace() / n as f64;
            log::warn!("RBF system ill-conditioned (cond1 ~ {cond:.3e}); adding diagonal jitter {jitter:.3e}");
            for i in 0..n {
                phi[(i, i)] += jitter;
            }
            lu = phi.clone().lu();
        }
    }
    let mut w = lu
        .solve(&y)
        .ok_or_else(|| Error::Singular("RBF system matrix is singular".into()))?;
    // one step of iterative refinement
    let r = &y - &phi * &w;
    if let Some(dw) = lu.solve(&r) {
        w += dw;
    }
    let residual = (&y - &phi * &w).norm();
    let scale = y.norm().max(f64::MIN_POSITIVE);
    if !(residual <= RESIDUAL_TOLERANCE * scale) {
        return Err(Error::Singular(format!(
            "RBF solve residual {residual:.3e} exceeds {RESIDUAL_TOLERANCE:e} * |y|"
        )));
    }

    Ok(RbfModel {
        dim,
        centers: points.iter().flatten().copied().collect(),
        weights: w.iter().copied().collect(),
        epsilon,
        smooth,
        kernel: Kernel::Multiquadric,
        jitter,
    })
}

/// Hager's estimate of `|A|_1 |A^-1|_1` for a symmetric matrix with LU factors.
fn condition_estimate(a: &DMatrix<f64>, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let n = a.nrows();
    let norm_a = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut estimate = 0.0;
    for _ in 0..5 {
        let Some(y) = lu.solve(&x) else {
            return f64::INFINITY;
        };
        estimate = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        // A is symmetric, so A^-T xi = A^-1 xi.
        let Some(z) = lu.solve(&xi) else {
            return f64::INFINITY;
        };
        let (j, zmax) = z
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if zmax <= z.dot(&x) {
            break;
        }
        x.fill(0.0);
        x[j] = 1.0;
    }
    norm_a * estimate
}
