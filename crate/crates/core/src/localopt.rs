//! Bound-constrained BFGS with finite-difference gradients.
//!
//! Bounds are handled by gradient projection: trial points are clamped into
//! the box and gradient components pushing outward at an active bound are
//! zeroed. Gradients use forward differences (backward at the upper bound),
//! so every objective call stays inside the box.

use serde::{Deserialize, Serialize};

use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::run::{EvaluationLog, Phase, RunResult, Termination};

pub const DEFAULT_MAX_ITERATIONS: usize = 200;
pub const DEFAULT_GRADIENT_TOLERANCE: f64 = 1e-6;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
/// Relative decrease below which the iteration is considered stalled
/// (`1e7` times machine epsilon).
const FUNCTION_TOLERANCE: f64 = 1e7 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalTermination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    LineSearchFailure,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalResult {
    pub x_final: Vec<f64>,
    pub f_final: f64,
    /// Objective calls, finite-difference probes included.
    pub n_evaluations: usize,
    pub converged: bool,
    pub termination: LocalTermination,
}

/// Per-coordinate difference step `sqrt(machine eps) * (1 + |x_i|)`.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + x.abs())
}

/// Forward-difference gradient of `f` at `x` (value `fx`), stepping backward
/// where a forward step would leave `bounds`. Returns the number of calls made.
pub fn finite_difference_gradient<F>(f: &mut F, x: &[f64], fx: f64, bounds: &Bounds, grad: &mut [f64]) -> usize
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        let step = if x[i] + h <= bounds.upper()[i] { h } else { -h };
        probe[i] = x[i] + step;
        let fp = f(&probe);
        grad[i] = (fp - fx) / step;
        probe[i] = x[i];
    }
    x.len()
}

fn at_lower(x: f64, lo: f64) -> bool {
    x <= lo
}

fn at_upper(x: f64, hi: f64) -> bool {
    x >= hi
}

fn projected_gradient(x: &[f64], g: &[f64], bounds: &Bounds) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| {
            if (at_lower(xi, bounds.lower()[i]) && gi > 0.0) || (at_upper(xi, bounds.upper()[i]) && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense inverse-Hessian approximation, row-major.
struct InverseHessian {
    n: usize,
    h: Vec<f64>,
    identity: bool,
}

impl InverseHessian {
    fn new(n: usize) -> Self {
        let mut h = InverseHessian {
            n,
            h: vec![0.0; n * n],
            identity: true,
        };
        h.reset(1.0);
        h
    }

    fn reset(&mut self, scale: f64) {
        self.h.fill(0.0);
        for i in 0..self.n {
            self.h[i * self.n + i] = scale;
        }
        self.identity = true;
    }

    /// `-H g` restricted to free coordinates.
    fn direction(&self, g: &[f64], free: &[bool]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                if !free[i] {
                    return 0.0;
                }
                -(0..n).filter(|&j| free[j]).map(|j| self.h[i * n + j] * g[j]).sum::<f64>()
            })
            .collect()
    }

    fn update(&mut self, s: &[f64], y: &[f64]) {
        let n = self.n;
        let sy = dot(s, y);
        let s_norm = dot(s, s).sqrt();
        let y_norm = dot(y, y).sqrt();
        if !(sy > 1e-10 * s_norm * y_norm) {
            return;
        }
        if self.identity {
            self.reset(sy / dot(y, y));
        }
        let rho = 1.0 / sy;
        // H+ = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
        let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| self.h[i * n + j] * y[j]).sum()).collect();
        let yhy = dot(y, &hy);
        for i in 0..n {
            for j in 0..n {
                self.h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
            }
        }
        self.identity = false;
    }
}

/// Minimize `objective` over `bounds` starting from `x0`.
///
/// The accepted-iterate objective values are non-increasing and every call
/// lies inside `bounds`. A non-finite objective value stops the search with
/// [`LocalTermination::NumericalFailure`] and the best point seen so far.
pub fn bfgs_minimize<F>(
    mut objective: F,
    x0: &[f64],
    bounds: &Bounds,
    max_iterations: usize,
    gradient_tolerance: f64,
) -> Result<LocalResult>
where
    F: FnMut(&[f64]) -> f64,
{
    bounds.check_point(x0)?;
    if !bounds.contains(x0) {
        return Err(Error::arg("BFGS start point outside bounds"));
    }
    if max_iterations == 0 {
        return Err(Error::arg("max_iterations must be >= 1"));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut f = objective(&x);
    let mut evals = 1;
    let finish = |x: Vec<f64>, f: f64, evals: usize, termination: LocalTermination| LocalResult {
        x_final: x,
        f_final: f,
        n_evaluations: evals,
        converged: matches!(
            termination,
            LocalTermination::GradientTolerance | LocalTermination::FunctionTolerance
        ),
        termination,
    };
    if !f.is_finite() {
        return Ok(finish(x, f, evals, LocalTermination::NumericalFailure));
    }

    let mut g = vec![0.0; n];
    evals += finite_difference_gradient(&mut objective, &x, f, bounds, &mut g);
    if g.iter().any(|v| !v.is_finite()) {
        return Ok(finish(x, f, evals, LocalTermination::NumericalFailure));
    }
    let mut hess = InverseHessian::new(n);
    let mut xt = vec![0.0; n];

    for _ in 0..max_iterations {
        let pg = projected_gradient(&x, &g, bounds);
        let pg_norm = inf_norm(&pg);
        if pg_norm <= gradient_tolerance {
            return Ok(finish(x, f, evals, LocalTermination::GradientTolerance));
        }
        let free: Vec<bool> = pg.iter().zip(&g).map(|(p, gi)| *p != 0.0 || *gi == 0.0).collect();
        let mut d = hess.direction(&g, &free);
        if !(dot(&d, &g) < 0.0) {
            hess.reset(1.0);
            d = pg.iter().map(|v| -v).collect();
        }

        // Unscaled steepest-descent steps start at unit infinity-norm length.
        let mut alpha = if hess.identity { 1.0f64.min(1.0 / inf_norm(&d)) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                xt[i] = x[i] + alpha * d[i];
            }
            bounds.project(&mut xt);
            if xt == x {
                break;
            }
            let ft = objective(&xt);
            evals += 1;
            if !ft.is_finite() {
                return Ok(finish(x, f, evals, LocalTermination::NumericalFailure));
            }
            let decrease: f64 = g.iter().zip(xt.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if ft <= f + ARMIJO_C1 * decrease && ft <= f {
                accepted = Some(ft);
                break;
            }
            alpha *= 0.5;
        }

        let Some(ft) = accepted else {
            if hess.identity {
                return Ok(finish(x, f, evals, LocalTermination::LineSearchFailure));
            }
            hess.reset(1.0);
            continue;
        };

        let mut gt = vec![0.0; n];
        evals += finite_difference_gradient(&mut objective, &xt, ft, bounds, &mut gt);
        if gt.iter().any(|v| !v.is_finite()) {
            return Ok(finish(xt.clone(), ft, evals, LocalTermination::NumericalFailure));
        }
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        hess.update(&s, &y);

        let rel_decrease = (f - ft) / f.abs().max(ft.abs()).max(1.0);
        x.copy_from_slice(&xt);
        f = ft;
        g = gt;
        if rel_decrease <= FUNCTION_TOLERANCE {
            return Ok(finish(x, f, evals, LocalTermination::FunctionTolerance));
        }
    }
    Ok(finish(x, f, evals, LocalTermination::MaxIterations))
}

/// Run BFGS on the true objective from the run's best point.
///
/// Every objective call is appended to the log with phase `polish`; the
/// final point becomes the polish result only when it improves `f_final`.
pub fn polish<F>(mut objective: F, result: RunResult, bounds: &Bounds) -> Result<RunResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if !bounds.contains(&result.x_final) {
        return Err(Error::arg("polish start point outside bounds"));
    }
    let RunResult {
        x_final,
        mut log,
        termination,
        seed,
        ..
    } = result;
    let local = {
        let log: &mut EvaluationLog = &mut log;
        bfgs_minimize(
            |x: &[f64]| {
                let v = objective(x);
                log.push(x.to_vec(), v, Phase::Polish);
                v
            },
            &x_final,
            bounds,
            DEFAULT_MAX_ITERATIONS,
            DEFAULT_GRADIENT_TOLERANCE,
        )?
    };
    let termination = if termination.is_failure() {
        termination
    } else if local.termination == LocalTermination::NumericalFailure {
        Termination::NumericalFailure
    } else {
        Termination::PolishComplete
    };
    Ok(RunResult::from_log(log, termination, seed))
}
