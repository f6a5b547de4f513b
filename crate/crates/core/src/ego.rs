//! Efficient global optimization: a Gaussian-process surrogate with the
//! expected-improvement acquisition.
//!
//! The GP uses an anisotropic squared-exponential correlation with a constant
//! (generalized least squares) mean. Inputs are mapped to the unit cube and
//! outputs standardized before fitting. Lengthscales maximize the
//! concentrated log marginal likelihood, in which the process variance and
//! the mean are profiled out analytically.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::localopt::{self, bfgs_minimize};
use crate::rbfopt::{exploration_point, min_distance, DistanceSpace};
use crate::run::{EvaluationLog, Phase, RunResult, Termination};
use crate::sampling::{latin_hypercube, uniform_point, SeededRng};

/// Relative nugget added to the correlation matrix.
pub const BASE_JITTER: f64 = 1e-8;
/// Largest nugget tried before the factorization is declared failed.
pub const MAX_JITTER: f64 = 1e-4;
/// Lengthscale search box, in unit-cube coordinates.
pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 10.0);
/// Random restarts of the likelihood maximization.
pub const HYPERPARAMETER_RESTARTS: usize = 5;
/// Starts of the acquisition maximization (best point plus top EI probes).
pub const ACQUISITION_STARTS: usize = 10;
/// Uniform probes ranked by EI to pick the acquisition starts.
pub const ACQUISITION_PROBES: usize = 1000;
/// Largest EI treated as "no expected improvement anywhere".
pub const EI_FLOOR: f64 = 1e-16;
/// Candidates closer than this (normalized) to the data are replaced by the
/// exploration point so the GP never sees a duplicate input.
const DUPLICATE_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoConfig {
    pub initial_points: usize,
    /// Adaptive evaluations after the initial design.
    pub max_iterations: usize,
    pub polish: bool,
}

impl EgoConfig {
    pub fn new(initial_points: usize, max_iterations: usize) -> Self {
        EgoConfig {
            initial_points,
            max_iterations,
            polish: false,
        }
    }

    pub fn with_polish(mut self, polish: bool) -> Self {
        self.polish = polish;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("initial_design_ndata", self.initial_points), ("max_iter", self.max_iterations)] {
            if v == 0 {
                return Err(Error::Config {
                    key: key.into(),
                    reason: "must be >= 1".into(),
                });
            }
        }
        if self.initial_points < 2 {
            return Err(Error::Config {
                key: "initial_design_ndata".into(),
                reason: "EGO needs at least 2 initial points".into(),
            });
        }
        Ok(())
    }
}

/// Fitted Gaussian-process regression model.
#[derive(Debug, Clone)]
pub struct GpModel {
    bounds: Bounds,
    training_points: Vec<Vec<f64>>,
    training_values: Vec<f64>,
    /// Training inputs in the unit cube.
    unit_points: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    lengthscales: Vec<f64>,
    /// Process variance of the standardized outputs.
    signal_variance: f64,
    noise_jitter: f64,
    /// GLS constant mean of the standardized outputs.
    mean: f64,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    /// `R^-1 (y - mean)` for standardized `y`.
    alpha: DVector<f64>,
    log_likelihood: f64,
    start_log_likelihoods: Vec<f64>,
    degenerate: bool,
}

impl GpModel {
    /// Training inputs, in the model's canonical (lexicographic) order.
    pub fn training_points(&self) -> &[Vec<f64>] {
        &self.training_points
    }

    pub fn training_values(&self) -> &[f64] {
        &self.training_values
    }

    /// Lengthscales in unit-cube coordinates.
    pub fn kernel_lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    /// Process variance in the objective's units; zero for degenerate data.
    pub fn signal_variance(&self) -> f64 {
        self.signal_variance * self.y_scale * self.y_scale
    }

    /// Nugget relative to the signal variance.
    pub fn noise_jitter(&self) -> f64 {
        self.noise_jitter
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Concentrated log marginal likelihood at the fitted lengthscales.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Log likelihood at each multi-start initial guess.
    pub fn start_log_likelihoods(&self) -> &[f64] {
        &self.start_log_likelihoods
    }

    fn correlations(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.unit_points.len(),
            self.unit_points.iter().map(|p| correlation(u, p, &self.lengthscales)),
        )
    }

    /// Standardized posterior mean and variance at unit-cube point `u`.
    fn predict_standardized(&self, u: &[f64]) -> (f64, f64) {
        let Some(chol) = &self.chol else {
            return (0.0, 0.0);
        };
        let r = self.correlations(u);
        let mean = self.mean + r.dot(&self.alpha);
        let v = chol.l_dirty().solve_lower_triangular(&r).expect("non-singular factor");
        let var = (self.signal_variance * (1.0 - v.norm_squared())).clamp(0.0, self.signal_variance);
        (mean, var)
    }
}

#[inline]
fn correlation(a: &[f64], b: &[f64], lengthscales: &[f64]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .zip(lengthscales)
        .map(|((x, y), l)| {
            let d = (x - y) / l;
            d * d
        })
        .sum();
    (-0.5 * s).exp()
}

struct Factorized {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    jitter: f64,
    mean: f64,
    sigma2: f64,
    alpha: DVector<f64>,
    log_likelihood: f64,
}

/// Factor the correlation matrix, doubling the nugget on failure, and
/// evaluate the concentrated likelihood.
fn factorize(unit_points: &[Vec<f64>], y: &DVector<f64>, lengthscales: &[f64]) -> Option<Factorized> {
    let n = unit_points.len();
    let base = DMatrix::from_fn(n, n, |i, j| correlation(&unit_points[i], &unit_points[j], lengthscales));
    let mut jitter = BASE_JITTER;
    while jitter <= MAX_JITTER * (1.0 + 1e-12) {
        let mut r = base.clone();
        for i in 0..n {
            r[(i, i)] += jitter;
        }
        if let Some(chol) = r.cholesky() {
            let ones = DVector::from_element(n, 1.0);
            let r_inv_1 = chol.solve(&ones);
            let r_inv_y = chol.solve(y);
            let mean = ones.dot(&r_inv_y) / ones.dot(&r_inv_1);
            let resid = y - DVector::from_element(n, mean);
            let alpha = chol.solve(&resid);
            let sigma2 = (resid.dot(&alpha) / n as f64).max(1e-300);
            let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let nf = n as f64;
            let log_likelihood =
                -0.5 * nf * sigma2.ln() - 0.5 * log_det - 0.5 * nf * (1.0 + (2.0 * std::f64::consts::PI).ln());
            if log_likelihood.is_finite() {
                return Some(Factorized {
                    chol,
                    jitter,
                    mean,
                    sigma2,
                    alpha,
                    log_likelihood,
                });
            }
        }
        jitter *= 2.0;
    }
    None
}

fn validate_training(points: &[Vec<f64>], values: &[f64], bounds: &Bounds) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::arg("GP fit needs at least 2 points"));
    }
    if points.len() != values.len() {
        return Err(Error::arg(format!("{} points but {} values", points.len(), values.len())));
    }
    for p in points {
        bounds.check_point(p)?;
    }
    if values.iter().any(|v| !v.is_finite()) || points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::arg("GP training data must be finite"));
    }
    for i in 0..points.len() {
        for j in 0..i {
            if points[i] == points[j] {
                return Err(Error::arg(format!("duplicate training points {j} and {i}")));
            }
        }
    }
    Ok(())
}

fn standardize(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Concentrated log marginal likelihood of the standardized data at the given
/// unit-cube lengthscales, or `None` if no nugget up to [`MAX_JITTER`] makes
/// the correlation matrix factorizable.
pub fn log_marginal_likelihood(points: &[Vec<f64>], values: &[f64], bounds: &Bounds, lengthscales: &[f64]) -> Result<Option<f64>> {
    validate_training(points, values, bounds)?;
    let (m, s) = standardize(values);
    if s == 0.0 {
        return Ok(None);
    }
    let unit: Vec<Vec<f64>> = points.iter().map(|p| bounds.to_unit(p)).collect();
    let y = DVector::from_iterator(values.len(), values.iter().map(|v| (v - m) / s));
    Ok(factorize(&unit, &y, lengthscales).map(|f| f.log_likelihood))
}

/// Fit a GP to `(points, values)` with maximum-likelihood lengthscales.
///
/// Lengthscales are searched in log space within [`LENGTHSCALE_BOUNDS`] by
/// BFGS from [`HYPERPARAMETER_RESTARTS`] random starts drawn from `rng`; the
/// best likelihood found wins. Data with zero spread yields a degenerate
/// model with a constant mean and zero variance.
pub fn gp_fit(points: &[Vec<f64>], values: &[f64], bounds: &Bounds, rng: &mut SeededRng) -> Result<GpModel> {
    validate_training(points, values, bounds)?;
    // Canonical (lexicographic) order makes the fit independent of input order.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let points: Vec<Vec<f64>> = order.iter().map(|&i| points[i].clone()).collect();
    let values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let (points, values) = (points.as_slice(), values.as_slice());
    let d = bounds.dim();
    let (y_mean, y_scale) = standardize(values);
    let unit_points: Vec<Vec<f64>> = points.iter().map(|p| bounds.to_unit(p)).collect();
    let mut model = GpModel {
        bounds: bounds.clone(),
        training_points: points.to_vec(),
        training_values: values.to_vec(),
        unit_points,
        y_mean,
        y_scale,
        lengthscales: vec![1.0; d],
        signal_variance: 0.0,
        noise_jitter: 0.0,
        mean: 0.0,
        chol: None,
        alpha: DVector::zeros(points.len()),
        log_likelihood: f64::NAN,
        start_log_likelihoods: Vec::new(),
        degenerate: false,
    };
    if !(y_scale > 0.0) {
        model.degenerate = true;
        model.y_scale = 1.0;
        return Ok(model);
    }
    let y = DVector::from_iterator(values.len(), values.iter().map(|v| (v - y_mean) / y_scale));

    let (lo, hi) = (LENGTHSCALE_BOUNDS.0.ln(), LENGTHSCALE_BOUNDS.1.ln());
    let log_box = Bounds::new(vec![lo; d], vec![hi; d])?;
    let unit = &model.unit_points;
    let neg_ll = |theta: &[f64]| -> f64 {
        let ls: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        match factorize(unit, &y, &ls) {
            Some(f) => -f.log_likelihood,
            None => f64::NAN,
        }
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_lls = Vec::with_capacity(HYPERPARAMETER_RESTARTS);
    for _ in 0..HYPERPARAMETER_RESTARTS {
        let start = uniform_point(&log_box, rng);
        let f0 = neg_ll(&start);
        start_lls.push(-f0);
        if !f0.is_finite() {
            continue;
        }
        let local = bfgs_minimize(neg_ll, &start, &log_box, 100, 1e-5)?;
        if local.f_final.is_finite() && best.as_ref().is_none_or(|b| local.f_final < b.1) {
            best = Some((local.x_final, local.f_final));
        }
    }
    let Some((theta, _)) = best else {
        return Err(Error::Numerical("GP correlation matrix not factorizable at any start".into()));
    };
    let lengthscales: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
    let f = factorize(&model.unit_points, &y, &lengthscales)
        .ok_or_else(|| Error::Numerical("GP factorization failed at the optimum".into()))?;
    model.lengthscales = lengthscales;
    model.signal_variance = f.sigma2;
    model.noise_jitter = f.jitter;
    model.mean = f.mean;
    model.alpha = f.alpha;
    model.log_likelihood = f.log_likelihood;
    model.chol = Some(f.chol);
    model.start_log_likelihoods = start_lls;
    Ok(model)
}

/// Posterior mean and variance at `x`, in the objective's units.
pub fn gp_predict(model: &GpModel, x: &[f64]) -> Result<(f64, f64)> {
    model.bounds.check_point(x)?;
    let (m, v) = model.predict_standardized(&model.bounds.to_unit(x));
    Ok((model.y_mean + model.y_scale * m, v * model.y_scale * model.y_scale))
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Closed-form expected improvement `E[max(f_best - Y, 0)]`, `Y ~ N(mu, sigma^2)`.
pub fn expected_improvement_from_moments(mu: f64, sigma: f64, f_best: f64) -> f64 {
    let gap = f_best - mu;
    if !(sigma > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// Expected improvement of the model at `x` over the incumbent `f_best`.
pub fn expected_improvement(model: &GpModel, x: &[f64], f_best: f64) -> Result<f64> {
    let (mu, var) = gp_predict(model, x)?;
    Ok(expected_improvement_from_moments(mu, var.sqrt(), f_best))
}

/// Maximize EI in standardized units on the unit cube. Returns `(point, ei)`.
///
/// The first BFGS start is the best training point; the other
/// `ACQUISITION_STARTS - 1` are the highest-EI points among
/// [`ACQUISITION_PROBES`] uniform probes.
fn maximize_ei(model: &GpModel, f_best: f64, best_point: &[f64], rng: &mut SeededRng) -> Result<(Vec<f64>, f64)> {
    let d = model.bounds.dim();
    let unit = Bounds::unit(d)?;
    let best_std = (f_best - model.y_mean) / model.y_scale;
    let neg_ei = |u: &[f64]| {
        let (m, v) = model.predict_standardized(u);
        -expected_improvement_from_moments(m, v.sqrt(), best_std)
    };
    let mut probes: Vec<(f64, Vec<f64>)> = (0..ACQUISITION_PROBES)
        .map(|_| {
            let u = uniform_point(&unit, rng);
            (neg_ei(&u), u)
        })
        .collect();
    // stable sort keeps draw order among ties
    probes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut first = model.bounds.to_unit(best_point);
    unit.project(&mut first);
    let starts = std::iter::once(first).chain(probes.into_iter().take(ACQUISITION_STARTS - 1).map(|(_, u)| u));

    let mut best: (Vec<f64>, f64) = (model.bounds.to_unit(best_point), f64::INFINITY);
    for start in starts {
        let local = bfgs_minimize(neg_ei, &start, &unit, 100, 1e-10)?;
        if local.f_final < best.1 {
            best = (local.x_final, local.f_final);
        }
    }
    let mut x = model.bounds.from_unit(&best.0);
    model.bounds.project(&mut x);
    Ok((x, -best.1 * model.y_scale))
}

/// Run EGO on `objective` over `bounds`.
///
/// After a Latin hypercube of `initial_points`, each of `max_iterations`
/// rounds refits the GP, maximizes EI and evaluates the objective at the
/// maximizer. When the largest EI is at most [`EI_FLOOR`] (or the maximizer
/// duplicates a data point) the maximin exploration point is evaluated
/// instead. A GP that cannot be fitted ends the run with
/// [`Termination::SurrogateFailure`] and the best point so far.
pub fn ego_minimize<F>(mut objective: F, bounds: &Bounds, config: &EgoConfig, rng: &mut SeededRng) -> Result<RunResult>
where
    F: FnMut(&[f64]) -> f64,
{
    config.validate()?;
    let seed = rng.seed();
    let mut log = EvaluationLog::new();
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut values: Vec<f64> = Vec::new();

    let design = latin_hypercube(config.initial_points, bounds, rng)?;
    for p in design.points {
        let v = objective(&p);
        log.push(p.clone(), v, Phase::Initial);
        if !v.is_finite() {
            return Ok(RunResult::from_log(log, Termination::NumericalFailure, seed));
        }
        points.push(p);
        values.push(v);
    }

    let mut termination = Termination::MaxIterations;
    for _ in 0..config.max_iterations {
        let model = match gp_fit(&points, &values, bounds, rng) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("GP fit failed: {e}");
                termination = Termination::SurrogateFailure;
                break;
            }
        };
        let best = log.best().expect("non-empty log");
        let (f_best, best_point) = (best.value, best.point.clone());
        let (mut candidate, ei) = if model.is_degenerate() {
            (best_point.clone(), 0.0)
        } else {
            maximize_ei(&model, f_best, &best_point, rng)?
        };
        let mut phase = Phase::Adaptive;
        if !(ei > EI_FLOOR) || min_distance(&candidate, &points, DistanceSpace::Normalized, bounds) < DUPLICATE_DISTANCE {
            candidate = exploration_point(&points, bounds, rng)?;
            phase = Phase::Exploration;
        }
        let v = objective(&candidate);
        log.push(candidate.clone(), v, phase);
        if !v.is_finite() {
            termination = Termination::NumericalFailure;
            break;
        }
        points.push(candidate);
        values.push(v);
    }

    let result = RunResult::from_log(log, termination, seed);
    if config.polish && !result.termination.is_failure() {
        localopt::polish(objective, result, bounds)
    } else {
        Ok(result)
    }
}
