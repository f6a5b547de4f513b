//! Replicate campaigns: seeding, parallel execution, aggregation and tables.
//!
//! Replicate `i` draws all randomness from `SeededRng::for_replicate(master_seed, i)`
//! and results are aggregated in replicate order, so a summary never depends
//! on the worker count.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ego::{ego_minimize, EgoConfig};
use crate::error::{Error, Result};
use crate::rbf::EpsilonRule;
use crate::rbfopt::{rbfopt_minimize, DistanceSpace, RbfOptConfig};
use crate::run::{log_header, write_log_rows, EvaluationLog, RunResult, Termination};
use crate::sampling::{replicate_seed, SeededRng};
use crate::stats::{classify_run, p_double, ClassificationRule, RunClassification};
use crate::testfuncs::{lookup, TestFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum AlgorithmConfig {
    Rbfopt(RbfOptConfig),
    Ego(EgoConfig),
}

impl AlgorithmConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmConfig::Rbfopt(_) => "RBFopt",
            AlgorithmConfig::Ego(_) => "EGO",
        }
    }

    pub fn initial_points(&self) -> usize {
        match self {
            AlgorithmConfig::Rbfopt(c) => c.initial_design_ndata,
            AlgorithmConfig::Ego(c) => c.initial_points,
        }
    }

    pub fn max_iter(&self) -> usize {
        match self {
            AlgorithmConfig::Rbfopt(c) => c.max_iter,
            AlgorithmConfig::Ego(c) => c.max_iterations,
        }
    }

    fn set_polish(&mut self, polish: bool) {
        match self {
            AlgorithmConfig::Rbfopt(c) => c.polish = polish,
            AlgorithmConfig::Ego(c) => c.polish = polish,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AlgorithmConfig::Rbfopt(c) => c.validate(),
            AlgorithmConfig::Ego(c) => c.validate(),
        }
    }

    /// Run one optimization of `f` with `rng`.
    pub fn run(&self, f: &TestFunction, rng: &mut SeededRng) -> Result<RunResult> {
        let objective = |x: &[f64]| f.value(x);
        match self {
            AlgorithmConfig::Rbfopt(c) => rbfopt_minimize(objective, &f.bounds, c, rng),
            AlgorithmConfig::Ego(c) => ego_minimize(objective, &f.bounds, c, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub function_name: String,
    pub algorithm: AlgorithmConfig,
    pub polish: bool,
    pub n_replicates: usize,
    pub master_seed: u64,
    pub parallelism: usize,
    pub classification: ClassificationRule,
}

/// On-disk campaign file: flat keys named after the optimizer keywords.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CampaignFile {
    function: String,
    algorithm: String,
    initial_design_ndata: usize,
    max_iter: usize,
    n_local_optimize: Option<usize>,
    eps: Option<f64>,
    eps_space: Option<String>,
    n_same_best: Option<usize>,
    polish: Option<bool>,
    smooth: Option<f64>,
    epsilon: Option<f64>,
    epsilon_rule: Option<String>,
    n_replicates: usize,
    /// Read as a signed TOML integer and reinterpreted bitwise.
    master_seed: i64,
    parallelism: Option<usize>,
    success_tolerance: Option<f64>,
}

fn config_error(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Key named in a toml error message such as "unknown field `foo`" or
/// "missing field `bar`".
fn offending_key(message: &str) -> Option<String> {
    for marker in ["unknown field `", "missing field `"] {
        if let Some(start) = message.find(marker) {
            let rest = &message[start + marker.len()..];
            return rest.find('`').map(|end| rest[..end].to_string());
        }
    }
    None
}

impl CampaignConfig {
    pub fn rbfopt(function_name: &str, config: RbfOptConfig, n_replicates: usize, master_seed: u64) -> Self {
        CampaignConfig {
            function_name: function_name.to_string(),
            polish: config.polish,
            algorithm: AlgorithmConfig::Rbfopt(config),
            n_replicates,
            master_seed,
            parallelism: 1,
            classification: ClassificationRule::default(),
        }
    }

    pub fn ego(function_name: &str, config: EgoConfig, n_replicates: usize, master_seed: u64) -> Self {
        CampaignConfig {
            function_name: function_name.to_string(),
            polish: config.polish,
            algorithm: AlgorithmConfig::Ego(config),
            n_replicates,
            master_seed,
            parallelism: 1,
            classification: ClassificationRule::default(),
        }
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism;
        self
    }

    /// Parse the flat key-value campaign format.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: CampaignFile = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            config_error(&offending_key(&msg).unwrap_or_else(|| "<document>".into()), msg)
        })?;
        let polish = raw.polish.unwrap_or(false);
        let algorithm = match raw.algorithm.as_str() {
            "rbfopt" => {
                let mut c = RbfOptConfig::new(raw.initial_design_ndata, raw.max_iter);
                if let Some(v) = raw.n_local_optimize {
                    c.n_local_optimize = v;
                }
                if let Some(v) = raw.eps {
                    c.eps = v;
                }
                if let Some(v) = &raw.eps_space {
                    c.eps_space = match v.as_str() {
                        "raw" => DistanceSpace::Raw,
                        "normalized" => DistanceSpace::Normalized,
                        _ => return Err(config_error("eps_space", format!("expected raw or normalized, got {v:?}"))),
                    };
                }
                if let Some(v) = raw.n_same_best {
                    c.n_same_best = v;
                }
                if let Some(v) = raw.smooth {
                    c.smooth = v;
                }
                if let Some(v) = &raw.epsilon_rule {
                    c.epsilon_rule = match v.as_str() {
                        "box-spacing" => EpsilonRule::BoxSpacing,
                        "nearest-neighbor" => EpsilonRule::NearestNeighbor,
                        _ => {
                            return Err(config_error(
                                "epsilon_rule",
                                format!("expected box-spacing or nearest-neighbor, got {v:?}"),
                            ))
                        }
                    };
                }
                c.epsilon = raw.epsilon;
                AlgorithmConfig::Rbfopt(c)
            }
            "ego" => {
                let rbf_only = [
                    ("n_local_optimize", raw.n_local_optimize.is_some()),
                    ("eps", raw.eps.is_some()),
                    ("eps_space", raw.eps_space.is_some()),
                    ("n_same_best", raw.n_same_best.is_some()),
                    ("smooth", raw.smooth.is_some()),
                    ("epsilon", raw.epsilon.is_some()),
                    ("epsilon_rule", raw.epsilon_rule.is_some()),
                ];
                if let Some((key, _)) = rbf_only.iter().find(|(_, set)| *set) {
                    return Err(config_error(key, "only valid with algorithm = \"rbfopt\""));
                }
                AlgorithmConfig::Ego(EgoConfig::new(raw.initial_design_ndata, raw.max_iter))
            }
            other => return Err(config_error("algorithm", format!("expected rbfopt or ego, got {other:?}"))),
        };
        let classification = match raw.success_tolerance {
            Some(t) => ClassificationRule::new(t)?,
            None => ClassificationRule::default(),
        };
        let config = CampaignConfig {
            function_name: raw.function,
            algorithm,
            polish,
            n_replicates: raw.n_replicates,
            master_seed: raw.master_seed as u64,
            parallelism: raw.parallelism.unwrap_or(1),
            classification,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        lookup(&self.function_name).map_err(|e| config_error("function", e.to_string()))?;
        if self.n_replicates == 0 {
            return Err(config_error("n_replicates", "must be >= 1"));
        }
        if self.parallelism == 0 {
            return Err(config_error("parallelism", "must be >= 1"));
        }
        ClassificationRule::new(self.classification.success_tolerance)?;
        self.algorithm.validate()
    }

    /// Algorithm settings with the campaign-level polish flag applied.
    pub fn effective_algorithm(&self) -> AlgorithmConfig {
        let mut a = self.algorithm.clone();
        a.set_polish(self.polish);
        a
    }

    /// Table label, e.g. `RBFopt` or `EGO/BFGS`.
    pub fn algorithm_label(&self) -> String {
        let mut label = self.algorithm.name().to_string();
        if self.polish {
            label.push_str("/BFGS");
        }
        label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub replicate: usize,
    pub result: RunResult,
    pub classification: RunClassification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinShare {
    pub label: String,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub function_name: String,
    pub algorithm_label: String,
    pub initial_points: usize,
    pub max_iter: usize,
    pub n_replicates: usize,
    pub master_seed: u64,
    pub percent_failures: f64,
    pub mean_evaluations: f64,
    /// In optimum catalog order.
    pub basin_percentages: Vec<BasinShare>,
    /// Runs that ended in a numerical or surrogate failure.
    pub n_crashed: usize,
    pub per_run: Vec<RunRecord>,
}

impl CampaignSummary {
    pub fn basin_percent(&self, label: &str) -> Option<f64> {
        self.basin_percentages.iter().find(|b| b.label == label).map(|b| b.percent)
    }

    pub fn failure_probability(&self) -> f64 {
        self.percent_failures / 100.0
    }
}

/// Run replicate `replicate` of `config` standalone.
pub fn run_replicate(config: &CampaignConfig, replicate: usize) -> Result<RunRecord> {
    let f = lookup(&config.function_name)?;
    let algorithm = config.effective_algorithm();
    Ok(replicate_with(&f, &algorithm, config, replicate))
}

fn replicate_with(f: &TestFunction, algorithm: &AlgorithmConfig, config: &CampaignConfig, replicate: usize) -> RunRecord {
    let mut rng = SeededRng::for_replicate(config.master_seed, replicate as u64);
    let result = match algorithm.run(f, &mut rng) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("replicate {replicate} aborted: {e}");
            RunResult::from_log(
                EvaluationLog::new(),
                Termination::NumericalFailure,
                replicate_seed(config.master_seed, replicate as u64),
            )
        }
    };
    let classification = classify_run(&result, &f.optima, &f.bounds, &config.classification)
        .expect("registry functions have non-empty catalogs");
    RunRecord {
        replicate,
        result,
        classification,
    }
}

/// Execute every replicate on a pool of `config.parallelism` workers.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignSummary> {
    config.validate()?;
    let f = lookup(&config.function_name)?;
    let algorithm = config.effective_algorithm();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
    let per_run: Vec<RunRecord> = pool.install(|| {
        (0..config.n_replicates)
            .into_par_iter()
            .map(|i| replicate_with(&f, &algorithm, config, i))
            .collect()
    });
    Ok(summarize(config, &f, per_run))
}

fn summarize(config: &CampaignConfig, f: &TestFunction, per_run: Vec<RunRecord>) -> CampaignSummary {
    let n = per_run.len() as f64;
    let failures = per_run.iter().filter(|r| !r.classification.success).count();
    let evaluations: usize = per_run.iter().map(|r| r.result.n_evaluations).sum();
    let basin_percentages = f
        .optima
        .iter()
        .map(|o| {
            let hits = per_run
                .iter()
                .filter(|r| r.classification.basin_label.as_deref() == Some(o.label.as_str()))
                .count();
            BasinShare {
                label: o.label.clone(),
                percent: 100.0 * hits as f64 / n,
            }
        })
        .collect();
    CampaignSummary {
        function_name: config.function_name.clone(),
        algorithm_label: config.algorithm_label(),
        initial_points: config.algorithm.initial_points(),
        max_iter: config.algorithm.max_iter(),
        n_replicates: per_run.len(),
        master_seed: config.master_seed,
        percent_failures: 100.0 * failures as f64 / n,
        mean_evaluations: evaluations as f64 / n,
        basin_percentages,
        n_crashed: per_run.iter().filter(|r| r.result.termination.is_failure()).count(),
        per_run,
    }
}

/// Predicted probability that two independent runs both fail.
pub fn double_run_failure(summary: &CampaignSummary) -> f64 {
    p_double(summary.percent_failures / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            _ => Err(Error::arg(format!("unknown table format {s:?}; expected markdown or csv"))),
        }
    }
}

/// Render summaries of one function as a table, one row per summary.
///
/// Percentages and means are printed with one decimal place.
pub fn render_table(summaries: &[CampaignSummary], format: TableFormat) -> Result<String> {
    let first = summaries.first().ok_or_else(|| Error::arg("no summaries to render"))?;
    if let Some(other) = summaries.iter().find(|s| s.function_name != first.function_name) {
        return Err(Error::arg(format!(
            "summaries mix functions {} and {}",
            first.function_name, other.function_name
        )));
    }
    let labels: Vec<&str> = first.basin_percentages.iter().map(|b| b.label.as_str()).collect();
    let mut header: Vec<String> = ["algorithm", "initial points", "max iterations", "percent failures", "mean evaluations"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(labels.iter().map(|l| l.to_string()));
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            let mut row = vec![
                s.algorithm_label.clone(),
                s.initial_points.to_string(),
                s.max_iter.to_string(),
                format!("{:.1}", s.percent_failures),
                format!("{:.1}", s.mean_evaluations),
            ];
            row.extend(labels.iter().map(|l| format!("{:.1}", s.basin_percent(l).unwrap_or(0.0))));
            row
        })
        .collect();

    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header)?;
            for row in &rows {
                w.write_record(row)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        TableFormat::Markdown => {
            let mut out = String::new();
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
            for row in &rows {
                let _ = writeln!(out, "| {} |", row.join(" | "));
            }
            Ok(out)
        }
    }
}

/// Write every run's evaluation log as `replicate,phase,x1..xd,f` rows.
pub fn write_run_logs<W: Write>(summary: &CampaignSummary, out: W) -> Result<()> {
    let dim = lookup(&summary.function_name)?.dimension();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(log_header(dim))?;
    for r in &summary.per_run {
        write_log_rows(&mut w, r.replicate, &r.result)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const SAMPLE: &str = r#"
function = "branin2"
algorithm = "rbfopt"
initial_design_ndata = 16
max_iter = 16
n_local_optimize = 5
eps = 0.002
eps_space = "normalized"
epsilon_rule = "nearest-neighbor"
n_same_best = 20
polish = true
n_replicates = 4
master_seed = 7
parallelism = 2
"#;

    #[test]
    fn parse_campaign_file() {
        let c = CampaignConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(c.function_name, "branin2");
        assert_eq!(c.n_replicates, 4);
        assert!(c.polish);
        assert_eq!(c.algorithm_label(), "RBFopt/BFGS");
        match c.effective_algorithm() {
            AlgorithmConfig::Rbfopt(r) => {
                assert!(r.polish);
                assert_eq!(r.initial_design_ndata, 16);
                assert_eq!(r.eps, 0.002);
                assert_eq!(r.eps_space, DistanceSpace::Normalized);
                assert_eq!(r.epsilon_rule, EpsilonRule::NearestNeighbor);
            }
            _ => panic!("expected rbfopt"),
        }
    }

    fn key_of(text: &str) -> String {
        match CampaignConfig::from_toml_str(text).unwrap_err() {
            Error::Config { key, .. } => key,
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn config_errors_name_the_key() {
        assert_eq!(key_of(&format!("{SAMPLE}\nbogus = 1\n")), "bogus");
        assert_eq!(key_of(&SAMPLE.replace("n_replicates = 4", "n_replicates = 0")), "n_replicates");
        assert_eq!(key_of(&SAMPLE.replace("eps = 0.002", "eps = -1.0")), "eps");
        assert_eq!(key_of(&SAMPLE.replace("\"branin2\"", "\"nope\"")), "function");
        assert_eq!(key_of(&SAMPLE.replace("\"rbfopt\"", "\"ego\"")), "n_local_optimize");
        assert_eq!(key_of(&SAMPLE.replace("max_iter = 16\n", "")), "max_iter");
        assert_eq!(key_of(&SAMPLE.replace("parallelism = 2", "parallelism = 0")), "parallelism");
        assert_eq!(key_of(&SAMPLE.replace("\"normalized\"", "\"warped\"")), "eps_space");
        assert_eq!(key_of(&SAMPLE.replace("\"nearest-neighbor\"", "\"x\"")), "epsilon_rule");
    }

    #[test]
    fn quadratic_campaign_succeeds() {
        let c = CampaignConfig::rbfopt("sphere2", RbfOptConfig::new(8, 10), 1, 3);
        let s = run_campaign(&c).unwrap();
        assert_eq!(s.percent_failures, 0.0);
        assert_eq!(s.basin_percent("s1"), Some(100.0));
        assert_eq!(s.mean_evaluations, s.per_run[0].result.n_evaluations as f64);
    }

    #[test]
    fn scheduling_invariance_and_seed_lineage() {
        let base = CampaignConfig::rbfopt("branin2", RbfOptConfig::new(8, 6), 6, 11);
        let a = run_campaign(&base.clone().with_parallelism(1)).unwrap();
        let b = run_campaign(&base.clone().with_parallelism(8)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let standalone = run_replicate(&base, 4).unwrap();
        assert_eq!(standalone, a.per_run[4]);
        assert_eq!(standalone.result.seed, replicate_seed(11, 4));
    }

    #[test]
    fn summary_accounting() {
        let c = CampaignConfig::rbfopt("branin2-fortified", RbfOptConfig::new(8, 8), 5, 2);
        let s = run_campaign(&c).unwrap();
        let failures = s.per_run.iter().filter(|r| !r.classification.success).count();
        assert_abs_diff_eq!(s.percent_failures, 100.0 * failures as f64 / 5.0, epsilon = 1e-12);
        let total: f64 = s.basin_percentages.iter().map(|b| b.percent).sum();
        assert!(total <= 100.5);
        let mean = s.per_run.iter().map(|r| r.result.log.len() as f64).sum::<f64>() / 5.0;
        assert_abs_diff_eq!(s.mean_evaluations, mean, epsilon = 1e-12);
    }

    fn fake_summary(function: &str, percent_failures: f64) -> CampaignSummary {
        let f = lookup(function).unwrap();
        CampaignSummary {
            function_name: function.into(),
            algorithm_label: "RBFopt".into(),
            initial_points: 16,
            max_iter: 16,
            n_replicates: 10,
            master_seed: 0,
            percent_failures,
            mean_evaluations: 48.25,
            basin_percentages: f
                .optima
                .iter()
                .enumerate()
                .map(|(i, o)| BasinShare {
                    label: o.label.clone(),
                    percent: i as f64 * 1.25,
                })
                .collect(),
            n_crashed: 0,
            per_run: Vec::new(),
        }
    }

    #[test]
    fn double_failure_values() {
        assert_abs_diff_eq!(double_run_failure(&fake_summary("branin2", 10.0)), 0.01, epsilon = 1e-15);
        assert_eq!(double_run_failure(&fake_summary("branin2", 0.0)), 0.0);
        assert_abs_diff_eq!(double_run_failure(&fake_summary("branin2", 1.0)), 1e-4, epsilon = 1e-18);
    }

    #[test]
    fn table_layouts() {
        let s = fake_summary("branin2", 0.2);
        let md = render_table(std::slice::from_ref(&s), TableFormat::Markdown).unwrap();
        assert_eq!(md.lines().count(), 3);
        assert!(md.starts_with("| algorithm | initial points | max iterations | percent failures | mean evaluations | b1 | b2 | b3 |"));

        let csv_text = render_table(std::slice::from_ref(&s), TableFormat::Csv).unwrap();
        let mut r = csv::Reader::from_reader(csv_text.as_bytes());
        let row = r.records().next().unwrap().unwrap();
        assert_eq!(&row[0], "RBFopt");
        assert_abs_diff_eq!(row[3].parse::<f64>().unwrap(), 0.2, epsilon = 0.05);
        assert_abs_diff_eq!(row[4].parse::<f64>().unwrap(), 48.25, epsilon = 0.05);
        assert_abs_diff_eq!(row[7].parse::<f64>().unwrap(), 2.5, epsilon = 0.05);

        let four = render_table(&[fake_summary("branin4-fortified", 0.0)], TableFormat::Csv).unwrap();
        let header = four.lines().next().unwrap();
        assert!(header.ends_with("b11,b12,b13,b21,b22,b23,b31,b32,b33"), "{header}");

        assert!(render_table(&[s.clone(), fake_summary("branin4", 0.0)], TableFormat::Csv).is_err());
        assert!(render_table(&[], TableFormat::Csv).is_err());
    }

    #[test]
    fn run_logs_csv() {
        let c = CampaignConfig::rbfopt("branin2", RbfOptConfig::new(6, 2), 2, 5);
        let s = run_campaign(&c).unwrap();
        let mut buf = Vec::new();
        write_run_logs(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let total: usize = s.per_run.iter().map(|r| r.result.log.len()).sum();
        assert_eq!(text.lines().count(), total + 1);
        assert!(text.starts_with("replicate,phase,x1,x2,f\n0,initial,"));
    }
}
