//! Evaluation logs and run results shared by the global optimizers.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Why a true-objective evaluation was made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Initial,
    Adaptive,
    Exploration,
    Polish,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Initial => "initial",
            Phase::Adaptive => "adaptive",
            Phase::Exploration => "exploration",
            Phase::Polish => "polish",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub point: Vec<f64>,
    pub value: f64,
    pub phase: Phase,
}

/// Ordered record of every true-objective call of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationLog {
    entries: Vec<Evaluation>,
}

impl EvaluationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, point: Vec<f64>, value: f64, phase: Phase) {
        self.entries.push(Evaluation { point, value, phase });
    }

    pub fn entries(&self) -> &[Evaluation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(|e| e.point.as_slice())
    }

    /// Index of the first entry holding the smallest finite value.
    pub fn best_index(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            if e.value.is_finite() && best.is_none_or(|(_, v)| e.value < v) {
                best = Some((i, e.value));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn best(&self) -> Option<&Evaluation> {
        self.best_index().map(|i| &self.entries[i])
    }

    pub fn count(&self, phase: Phase) -> usize {
        self.entries.iter().filter(|e| e.phase == phase).count()
    }

    /// Best-so-far value after each entry.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.entries
            .iter()
            .map(|e| {
                if e.value < best {
                    best = e.value;
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    MaxIterations,
    Stagnation,
    PolishComplete,
    NumericalFailure,
    SurrogateFailure,
}

impl Termination {
    /// Whether the run ended abnormally.
    pub fn is_failure(self) -> bool {
        matches!(self, Termination::NumericalFailure | Termination::SurrogateFailure)
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::MaxIterations => "max-iterations",
            Termination::Stagnation => "stagnation",
            Termination::PolishComplete => "polish-complete",
            Termination::NumericalFailure => "numerical-failure",
            Termination::SurrogateFailure => "surrogate-failure",
        })
    }
}

/// Outcome of one global optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub x_final: Vec<f64>,
    pub f_final: f64,
    pub log: EvaluationLog,
    pub n_evaluations: usize,
    pub termination: Termination,
    pub seed: u64,
}

impl RunResult {
    /// Build a result whose final point is the best logged evaluation.
    ///
    /// A log without any finite value yields `f_final = NaN` and an empty point.
    pub fn from_log(log: EvaluationLog, termination: Termination, seed: u64) -> Self {
        let (x_final, f_final) = match log.best() {
            Some(e) => (e.point.clone(), e.value),
            None => (Vec::new(), f64::NAN),
        };
        RunResult {
            x_final,
            f_final,
            n_evaluations: log.len(),
            log,
            termination,
            seed,
        }
    }
}

/// Append a run's log as CSV rows `replicate,phase,x1..xd,f`.
pub fn write_log_rows<W: Write>(w: &mut csv::Writer<W>, replicate: usize, result: &RunResult) -> Result<()> {
    for e in result.log.entries() {
        let mut row = Vec::with_capacity(e.point.len() + 3);
        row.push(replicate.to_string());
        row.push(e.phase.to_string());
        row.extend(e.point.iter().map(|v| format!("{v}")));
        row.push(format!("{}", e.value));
        w.write_record(&row)?;
    }
    Ok(())
}

/// Header for [`write_log_rows`] in dimension `dim`.
pub fn log_header(dim: usize) -> Vec<String> {
    let mut h = vec!["replicate".to_string(), "phase".to_string()];
    h.extend((1..=dim).map(|i| format!("x{i}")));
    h.push("f".into());
    h
}
