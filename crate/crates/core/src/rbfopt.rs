//! RBF adaptive-sampling optimizer.
//!
//! One run:
//!
//! 1. evaluate a Latin hypercube of `initial_design_ndata` points and fit a
//!    multiquadric RBF;
//! 2. run `n_local_optimize` BFGS searches on the surrogate, the first from
//!    the best observed point and the rest from uniform random points;
//! 3. evaluate every surrogate minimizer that is at least `eps` (Euclidean,
//!    in the space chosen by `eps_space`) from all earlier points and from
//!    the candidates already accepted this iteration; when none qualifies,
//!    evaluate the point maximizing the minimum distance to the data instead;
//! 4. refit and repeat until `max_iter` iterations or `n_same_best`
//!    consecutive iterations without a strict improvement of the best value;
//! 5. optionally polish the best point with BFGS on the true objective.

use serde::{Deserialize, Serialize};

use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::localopt::{self, bfgs_minimize, DEFAULT_GRADIENT_TOLERANCE, DEFAULT_MAX_ITERATIONS};
use crate::rbf::{rbf_fit, EpsilonRule, RbfModel};
use crate::run::{EvaluationLog, Phase, RunResult, Termination};
use crate::sampling::{latin_hypercube, uniform_point, SeededRng};

/// Smallest decrease of the best value that counts as an improvement.
pub const IMPROVEMENT_FLOOR: f64 = 1e-12;
/// Uniform probes whose best min-distance is the floor for [`exploration_point`].
pub const EXPLORATION_PROBES: usize = 1000;
/// Temperature of the soft minimum used as the smooth maximin objective.
const SOFTMIN_TEMPERATURE: f64 = 1e-3;
/// Diagonal regularization added when a surrogate fit fails.
const RETRY_SMOOTH: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    AllLocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    Distance,
}

/// Coordinates in which the `eps` distance filter is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSpace {
    /// Original design coordinates.
    #[default]
    Raw,
    /// Each coordinate mapped affinely onto `[0, 1]`.
    Normalized,
}

impl DistanceSpace {
    pub fn distance(self, a: &[f64], b: &[f64], bounds: &Bounds) -> f64 {
        match self {
            DistanceSpace::Raw => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            DistanceSpace::Normalized => bounds.normalized_distance(a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfOptConfig {
    pub initial_design_ndata: usize,
    pub n_local_optimize: usize,
    /// Distance filter threshold, measured in `eps_space`.
    pub eps: f64,
    pub eps_space: DistanceSpace,
    pub max_iter: usize,
    pub n_same_best: usize,
    pub polish: bool,
    pub strategy: Strategy,
    pub exploration: Exploration,
    pub smooth: f64,
    /// RBF shape parameter; `None` derives it from the data with `epsilon_rule`
    /// at every refit.
    pub epsilon: Option<f64>,
    pub epsilon_rule: EpsilonRule,
}

impl RbfOptConfig {
    pub fn new(initial_design_ndata: usize, max_iter: usize) -> Self {
        RbfOptConfig {
            initial_design_ndata,
            n_local_optimize: 5,
            eps: 0.002,
            eps_space: DistanceSpace::Raw,
            max_iter,
            n_same_best: 20,
            polish: false,
            strategy: Strategy::AllLocal,
            exploration: Exploration::Distance,
            smooth: 0.0,
            epsilon: None,
            epsilon_rule: EpsilonRule::BoxSpacing,
        }
    }

    /// Spend half of `total_budget` on the initial design and allow the
    /// other half as iterations.
    pub fn with_half_budget(total_budget: usize) -> Self {
        let initial = (total_budget / 2).max(1);
        RbfOptConfig::new(initial, total_budget.saturating_sub(initial).max(1))
    }

    pub fn with_polish(mut self, polish: bool) -> Self {
        self.polish = polish;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("initial_design_ndata", self.initial_design_ndata),
            ("n_local_optimize", self.n_local_optimize),
            ("max_iter", self.max_iter),
            ("n_same_best", self.n_same_best),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config {
                    key: key.into(),
                    reason: "must be >= 1".into(),
                });
            }
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::Config {
                key: "eps".into(),
                reason: format!("must be > 0, got {}", self.eps),
            });
        }
        if !(self.smooth >= 0.0) || !self.smooth.is_finite() {
            return Err(Error::Config {
                key: "smooth".into(),
                reason: format!("must be >= 0, got {}", self.smooth),
            });
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::Config {
                    key: "epsilon".into(),
                    reason: format!("must be > 0, got {e}"),
                });
            }
        }
        Ok(())
    }
}

/// Minimize the surrogate from `n_local_optimize` starts.
///
/// The first start is `best_point`; the others are uniform random points.
/// A search that does not converge still contributes its best iterate.
pub fn propose_candidates(
    model: &RbfModel,
    best_point: &[f64],
    bounds: &Bounds,
    n_local_optimize: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(n_local_optimize);
    for k in 0..n_local_optimize {
        let start = if k == 0 {
            best_point.to_vec()
        } else {
            uniform_point(bounds, rng)
        };
        let local = bfgs_minimize(
            |x: &[f64]| model.value(x),
            &start,
            bounds,
            DEFAULT_MAX_ITERATIONS,
            DEFAULT_GRADIENT_TOLERANCE,
        )?;
        out.push(local.x_final);
    }
    Ok(out)
}

/// Keep each candidate whose distance to every history point and every
/// previously kept candidate is at least `eps`. Order is preserved.
pub fn distance_filter(
    candidates: &[Vec<f64>],
    history: &[Vec<f64>],
    eps: f64,
    space: DistanceSpace,
    bounds: &Bounds,
) -> Vec<Vec<f64>> {
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for c in candidates {
        let far = history
            .iter()
            .chain(kept.iter())
            .all(|h| space.distance(c, h, bounds) >= eps);
        if far {
            kept.push(c.clone());
        }
    }
    kept
}

/// Minimum distance from `x` to any history point.
pub fn min_distance(x: &[f64], history: &[Vec<f64>], space: DistanceSpace, bounds: &Bounds) -> f64 {
    history
        .iter()
        .map(|h| space.distance(x, h, bounds))
        .fold(f64::INFINITY, f64::min)
}

/// Feasible point approximately maximizing the minimum normalized distance to
/// `history`, using the default of five local searches.
pub fn exploration_point(history: &[Vec<f64>], bounds: &Bounds, rng: &mut SeededRng) -> Result<Vec<f64>> {
    exploration_point_with(history, bounds, rng, 5)
}

/// Maximin exploration point from `n_starts` BFGS searches.
///
/// Works in the unit cube on a soft-min smoothing of the min-distance. The
/// first search starts from the best of [`EXPLORATION_PROBES`] uniform
/// probes, the rest from fresh uniform points; the returned point is never
/// worse than that best probe.
pub fn exploration_point_with(
    history: &[Vec<f64>],
    bounds: &Bounds,
    rng: &mut SeededRng,
    n_starts: usize,
) -> Result<Vec<f64>> {
    if history.is_empty() {
        return Err(Error::arg("exploration point needs a non-empty history"));
    }
    let d = bounds.dim();
    let unit = Bounds::unit(d)?;
    let hist: Vec<Vec<f64>> = history.iter().map(|h| bounds.to_unit(h)).collect();
    let exact = |u: &[f64]| min_distance(u, &hist, DistanceSpace::Normalized, &unit);
    let smooth = |u: &[f64]| {
        // soft max of -d_i, an upper bound on -min_i d_i
        let neg: Vec<f64> = hist.iter().map(|h| -unit.normalized_distance(u, h)).collect();
        let m = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = neg.iter().map(|v| ((v - m) / SOFTMIN_TEMPERATURE).exp()).sum();
        m + SOFTMIN_TEMPERATURE * s.ln()
    };

    let mut best_probe = uniform_point(&unit, rng);
    let mut best_probe_d = exact(&best_probe);
    for _ in 1..EXPLORATION_PROBES {
        let u = uniform_point(&unit, rng);
        let dist = exact(&u);
        if dist > best_probe_d {
            best_probe = u;
            best_probe_d = dist;
        }
    }

    let mut best = best_probe.clone();
    let mut best_d = best_probe_d;
    for k in 0..n_starts.max(1) {
        let start = if k == 0 { best_probe.clone() } else { uniform_point(&unit, rng) };
        let local = bfgs_minimize(smooth, &start, &unit, DEFAULT_MAX_ITERATIONS, 1e-9)?;
        let dist = exact(&local.x_final);
        if dist > best_d {
            best = local.x_final;
            best_d = dist;
        }
    }
    let mut x = bounds.from_unit(&best);
    bounds.project(&mut x);
    Ok(x)
}

fn fit_surrogate(points: &[Vec<f64>], values: &[f64], config: &RbfOptConfig) -> Result<RbfModel> {
    let epsilon = match config.epsilon {
        Some(e) => Some(e),
        None if points.len() >= 2 => Some(config.epsilon_rule.epsilon(points)?),
        None => None,
    };
    match rbf_fit(points, values, epsilon, config.smooth) {
        Ok(m) => Ok(m),
        Err(e) => {
            log::warn!("RBF fit failed ({e}); retrying with smooth += {RETRY_SMOOTH:e}");
            rbf_fit(points, values, epsilon, config.smooth + RETRY_SMOOTH)
        }
    }
}

/// Run the RBF adaptive-sampling optimizer on `objective` over `bounds`.
pub fn rbfopt_minimize<F>(mut objective: F, bounds: &Bounds, config: &RbfOptConfig, rng: &mut SeededRng) -> Result<RunResult>
where
    F: FnMut(&[f64]) -> f64,
{
    config.validate()?;
    let seed = rng.seed();
    let mut log = EvaluationLog::new();
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut values: Vec<f64> = Vec::new();

    let design = latin_hypercube(config.initial_design_ndata, bounds, rng)?;
    for p in design.points {
        let v = objective(&p);
        log.push(p.clone(), v, Phase::Initial);
        if !v.is_finite() {
            return Ok(RunResult::from_log(log, Termination::NumericalFailure, seed));
        }
        points.push(p);
        values.push(v);
    }

    let mut best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut stagnant = 0;
    let mut termination = Termination::MaxIterations;

    'outer: for _ in 0..config.max_iter {
        let model = match fit_surrogate(&points, &values, config) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("surrogate fit failed after retry: {e}");
                termination = Termination::Stagnation;
                break;
            }
        };
        let best_point = log.best().map(|e| e.point.clone()).expect("non-empty log");
        let candidates = propose_candidates(&model, &best_point, bounds, config.n_local_optimize, rng)?;
        let mut batch: Vec<(Vec<f64>, Phase)> = distance_filter(&candidates, &points, config.eps, config.eps_space, bounds)
            .into_iter()
            .map(|p| (p, Phase::Adaptive))
            .collect();
        if batch.is_empty() {
            let p = exploration_point_with(&points, bounds, rng, config.n_local_optimize)?;
            if min_distance(&p, &points, config.eps_space, bounds) < config.eps {
                termination = Termination::Stagnation;
                break;
            }
            batch.push((p, Phase::Exploration));
        }

        let previous_best = best;
        for (p, phase) in batch {
            let v = objective(&p);
            log.push(p.clone(), v, phase);
            if !v.is_finite() {
                termination = Termination::NumericalFailure;
                break 'outer;
            }
            best = best.min(v);
            points.push(p);
            values.push(v);
        }

        if best < previous_best - IMPROVEMENT_FLOOR {
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant >= config.n_same_best {
                termination = Termination::Stagnation;
                break;
            }
        }
    }

    let result = RunResult::from_log(log, termination, seed);
    if config.polish && !termination.is_failure() {
        localopt::polish(objective, result, bounds)
    } else {
        Ok(result)
    }
}
