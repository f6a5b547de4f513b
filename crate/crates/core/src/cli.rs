//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::ego::EgoConfig;
use crate::error::{Error, Result};
use crate::harness::{render_table, run_campaign, write_run_logs, AlgorithmConfig, CampaignConfig, CampaignSummary, TableFormat};
use crate::rbfopt::{DistanceSpace, RbfOptConfig};
use crate::run::{log_header, write_log_rows};
use crate::sampling::SeededRng;
use crate::testfuncs::{grid, lookup, write_grid_csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable supplying the default campaign worker count.
pub const PARALLELISM_ENV: &str = "SURROBENCH_PARALLELISM";

#[derive(Debug, Parser)]
#[command(name = "surrobench", version, about = "Surrogate-based optimization benchmarks on fortified Branin-Hoo functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Rbfopt,
    Ego,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    Raw,
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Markdown,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a registered function at one point.
    Eval {
        function: String,
        #[arg(allow_negative_numbers = true, required = true)]
        point: Vec<f64>,
    },
    /// Write a regular grid of function values as CSV.
    Grid {
        function: String,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        #[arg(long, short)]
        output: PathBuf,
        /// Hold an axis fixed, e.g. `x1=-3.14159265` (repeatable).
        #[arg(long, allow_hyphen_values = true)]
        slice: Vec<String>,
    },
    /// Run one optimization and print its result.
    Optimize {
        function: String,
        #[arg(long, value_enum, default_value_t = AlgorithmArg::Rbfopt)]
        algorithm: AlgorithmArg,
        #[arg(long, default_value_t = 16)]
        initial_design_ndata: usize,
        #[arg(long, default_value_t = 16)]
        max_iter: usize,
        #[arg(long)]
        n_local_optimize: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        /// Space in which `--eps` is measured.
        #[arg(long, value_enum)]
        eps_space: Option<SpaceArg>,
        #[arg(long)]
        n_same_best: Option<usize>,
        /// Follow the global search with a BFGS run on the true objective.
        #[arg(long)]
        polish: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the evaluation log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run a replicate campaign from a config file.
    Campaign {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
        /// Worker count; overrides the config file.
        #[arg(long, env = PARALLELISM_ENV)]
        parallelism: Option<usize>,
    },
    /// Render campaign summaries (JSON) as one table.
    Table {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
        format: FormatArg,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DimensionMismatch { .. } | Error::InvalidArgument(_) | Error::UnsupportedFunction { .. } | Error::Config { .. } => {
            EXIT_USAGE
        }
        Error::Singular(_) | Error::Numerical(_) | Error::Io(_) => EXIT_RUNTIME,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn parse_slice(spec: &str) -> Result<(usize, f64)> {
    let (axis, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("slice {spec:?} must look like x1=value")))?;
    let axis: usize = axis
        .trim_start_matches('x')
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad slice axis in {spec:?}")))?;
    if axis == 0 {
        return Err(Error::InvalidArgument("slice axes are numbered from 1".into()));
    }
    let value: f64 = value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad slice value in {spec:?}")))?;
    Ok((axis - 1, value))
}

fn cmd_eval(function: &str, point: &[f64], out: &mut dyn Write) -> Result<()> {
    let f = lookup(function)?;
    let v = f.evaluate(point)?;
    writeln!(out, "{v:.6}")?;
    Ok(())
}

fn cmd_grid(function: &str, resolution: usize, output: &Path, slice: &[String]) -> Result<()> {
    let f = lookup(function)?;
    let fixed = slice.iter().map(|s| parse_slice(s)).collect::<Result<Vec<_>>>()?;
    let rows = grid(&f, resolution, &fixed)?;
    write_grid_csv(&f, &rows, create(output)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    function: &str,
    algorithm: AlgorithmArg,
    initial_design_ndata: usize,
    max_iter: usize,
    n_local_optimize: Option<usize>,
    eps: Option<f64>,
    eps_space: Option<SpaceArg>,
    n_same_best: Option<usize>,
    polish: bool,
    seed: u64,
    log: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let f = lookup(function)?;
    let config = match algorithm {
        AlgorithmArg::Rbfopt => {
            let mut c = RbfOptConfig::new(initial_design_ndata, max_iter).with_polish(polish);
            if let Some(v) = n_local_optimize {
                c.n_local_optimize = v;
            }
            if let Some(v) = eps {
                c.eps = v;
            }
            match eps_space {
                Some(SpaceArg::Raw) => c.eps_space = DistanceSpace::Raw,
                Some(SpaceArg::Normalized) => c.eps_space = DistanceSpace::Normalized,
                None => {}
            }
            if let Some(v) = n_same_best {
                c.n_same_best = v;
            }
            AlgorithmConfig::Rbfopt(c)
        }
        AlgorithmArg::Ego => {
            let rbf_only = [
                ("--n-local-optimize", n_local_optimize.is_some()),
                ("--eps", eps.is_some()),
                ("--eps-space", eps_space.is_some()),
                ("--n-same-best", n_same_best.is_some()),
            ];
            if let Some((flag, _)) = rbf_only.iter().find(|(_, set)| *set) {
                return Err(Error::InvalidArgument(format!("{flag} requires --algorithm rbfopt")));
            }
            AlgorithmConfig::Ego(EgoConfig::new(initial_design_ndata, max_iter).with_polish(polish))
        }
    };
    config.validate()?;
    let mut rng = SeededRng::new(seed);
    let result = config.run(&f, &mut rng)?;
    let x: Vec<String> = result.x_final.iter().map(|v| format!("{v:.6}")).collect();
    writeln!(out, "x_final: [{}]", x.join(", "))?;
    writeln!(out, "f_final: {:.6}", result.f_final)?;
    writeln!(out, "n_evaluations: {}", result.n_evaluations)?;
    writeln!(out, "termination: {}", result.termination)?;
    if let Some(path) = log {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(log_header(f.dimension()))?;
        write_log_rows(&mut w, 0, &result)?;
        w.flush()?;
    }
    if result.termination.is_failure() {
        return Err(Error::Numerical(format!("run ended with {}", result.termination)));
    }
    Ok(())
}

fn cmd_campaign(config_path: &Path, output_dir: &Path, parallelism: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let mut config = CampaignConfig::from_path(config_path)?;
    if let Some(p) = parallelism {
        config = config.with_parallelism(p);
    }
    config.validate()?;
    let summary = run_campaign(&config)?;
    std::fs::create_dir_all(output_dir).map_err(|e| Error::Io(format!("{}: {e}", output_dir.display())))?;

    let mut json = create(&output_dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut json, &summary).map_err(|e| Error::Io(e.to_string()))?;
    json.flush()?;
    let one = std::slice::from_ref(&summary);
    let csv_text = render_table(one, TableFormat::Csv)?;
    let md = render_table(one, TableFormat::Markdown)?;
    create(&output_dir.join("summary.csv"))?.write_all(csv_text.as_bytes())?;
    create(&output_dir.join("summary.md"))?.write_all(md.as_bytes())?;
    write_run_logs(&summary, create(&output_dir.join("runs.csv"))?)?;

    writeln!(out, "{}", md.lines().last().unwrap_or_default())?;
    if summary.n_crashed > 0 {
        return Err(Error::Numerical(format!("{} replicate(s) crashed numerically", summary.n_crashed)));
    }
    Ok(())
}

fn cmd_table(paths: &[PathBuf], format: FormatArg, out: &mut dyn Write) -> Result<()> {
    let summaries = paths
        .iter()
        .map(|p| {
            let file = File::open(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<CampaignSummary>>>()?;
    let format = match format {
        FormatArg::Markdown => TableFormat::Markdown,
        FormatArg::Csv => TableFormat::Csv,
    };
    write!(out, "{}", render_table(&summaries, format)?)?;
    Ok(())
}

/// Execute a parsed command.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Eval { function, point } => cmd_eval(&function, &point, out),
        Command::Grid {
            function,
            resolution,
            output,
            slice,
        } => cmd_grid(&function, resolution, &output, &slice),
        Command::Optimize {
            function,
            algorithm,
            initial_design_ndata,
            max_iter,
            n_local_optimize,
            eps,
            eps_space,
            n_same_best,
            polish,
            seed,
            log,
        } => cmd_optimize(
            &function,
            algorithm,
            initial_design_ndata,
            max_iter,
            n_local_optimize,
            eps,
            eps_space,
            n_same_best,
            polish,
            seed,
            log.as_deref(),
            out,
        ),
        Command::Campaign {
            config,
            output_dir,
            parallelism,
        } => cmd_campaign(&config, &output_dir, parallelism, out),
        Command::Table { summaries, format } => cmd_table(&summaries, format, out),
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["surrobench"];
        full.extend_from_slice(args);
        let code = run(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn eval_prints_six_decimals() {
        assert_eq!(call(&["eval", "branin2", "--", "-3.14159265", "12.275"]), (0, "0.397887\n".into(), String::new()));
        assert_eq!(call(&["eval", "branin2", "--", "0", "0"]).1, "55.602113\n");
        // 2 * 0.39788736 prints as 0.795775 at six decimals.
        let four: f64 = call(&["eval", "branin4", "--", "3.14159265", "2.275", "3.14159265", "2.275"]).1.trim().parse().unwrap();
        assert!((four - 0.795774).abs() <= 1e-5);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(call(&["eval", "branin2", "--", "1"]).0, EXIT_USAGE);
        let (code, _, err) = call(&["eval", "nope", "--", "1", "2"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("branin4-fortified-b11"));
        assert_eq!(call(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(call(&["optimize", "branin2", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(call(&["optimize", "branin2", "--algorithm", "ego", "--eps", "0.1"]).0, EXIT_USAGE);
        assert_eq!(call(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn slice_parsing() {
        assert_eq!(parse_slice("x1=-3.5").unwrap(), (0, -3.5));
        assert_eq!(parse_slice("2=1").unwrap(), (1, 1.0));
        assert!(parse_slice("x0=1").is_err());
        assert!(parse_slice("x1").is_err());
    }
}
