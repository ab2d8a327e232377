use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iterlap::montecarlo::diagnostics;
use iterlap::target::{load_enso, nist_start, EnsoDataset, NistStart};
use iterlap::{importance_sample, run_iterlap, IterLapConfig, IterLapResult, Proposal};
use iterlap_cli::{
    emit_report, run_benchmark, run_enso, BenchmarkSettings, Case, CliError, CliResult, EnsoSettings, Format, Method,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "iterlap",
    version,
    about = "Iterated Laplace approximations of unnormalized densities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a mixture approximation and write it as JSON.
    #[command(allow_negative_numbers = true)]
    Approximate(ApproximateArgs),
    /// Importance-sample a target using an approximation as proposal.
    #[command(allow_negative_numbers = true)]
    Sample(SampleArgs),
    /// NESS and moment errors of an approximation over repeated sampling runs.
    #[command(allow_negative_numbers = true)]
    Benchmark(BenchmarkArgs),
    /// Posterior cycle lengths for the ENSO regression model.
    #[command(allow_negative_numbers = true)]
    Enso(EnsoArgs),
}

#[derive(Args)]
struct Tuning {
    /// Grid points per component [default: ceil(50 p^1.25)]
    #[arg(long)]
    grid_n: Option<usize>,
    /// Max-error tolerance on the grid
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Relative tolerance for the normalizing-constant rule
    #[arg(long, default_value_t = 0.005)]
    eps: f64,
    #[arg(long, default_value_t = 20)]
    max_components: usize,
}

impl Tuning {
    fn config(&self, seed: u64) -> CliResult<IterLapConfig> {
        let cfg = IterLapConfig {
            n: self.grid_n,
            delta: self.delta,
            eps: self.eps,
            max_components: self.max_components,
            seed,
            ..Default::default()
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Point(Vec<f64>);

fn parse_point(s: &str) -> Result<Point, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(Point)
}

fn parse_case(s: &str) -> Result<Case, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

#[derive(Args)]
struct ApproximateArgs {
    #[arg(long, value_parser = parse_case)]
    case: Case,
    /// Comma-separated starting point; repeat for several starts [default: zero vector]
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    start: Vec<Point>,
    #[command(flatten)]
    tuning: Tuning,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, value_parser = parse_case)]
    case: Case,
    /// Use an approximation written by `approximate` instead of building one
    #[arg(long)]
    from_file: Option<PathBuf>,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    start: Vec<Point>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Sample from the Student-t version of the mixture with this many degrees of freedom
    #[arg(long)]
    df: Option<f64>,
    /// `json` for diagnostics, `csv` for the draws and log-weights
    #[arg(long, default_value = "json", value_parser = ["json", "csv"])]
    format: String,
    #[command(flatten)]
    tuning: Tuning,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, value_parser = parse_case)]
    case: Case,
    /// Approximation method [default: both]
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Use 100 repetitions
    #[arg(long, conflicts_with = "reps")]
    paper_scale: bool,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    start: Option<Point>,
    #[arg(long, default_value = "json", value_parser = parse_format)]
    format: Format,
    #[command(flatten)]
    tuning: Tuning,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EnsoArgs {
    /// Whitespace- or comma-separated monthly series [default: bundled copy]
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON file with `order` and `values` of the starting point [default: certified least-squares point]
    #[arg(long)]
    start: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 5000)]
    resample: usize,
    #[arg(long, default_value_t = 10.0)]
    df: f64,
    #[command(flatten)]
    tuning: Tuning,
    #[command(flatten)]
    common: Common,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn starts(case: Case, given: &[Point]) -> CliResult<Vec<Vec<f64>>> {
    if given.is_empty() {
        return Ok(vec![case.default_start()?]);
    }
    for p in given {
        if p.0.len() != case.dim() {
            return Err(CliError::Usage(format!(
                "start has {} coordinates, `{case}` needs {}",
                p.0.len(),
                case.dim()
            )));
        }
    }
    Ok(given.iter().map(|p| p.0.clone()).collect())
}

fn to_json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(iterlap::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn approximate(a: &ApproximateArgs) -> CliResult<String> {
    let cfg = a.tuning.config(a.common.seed)?;
    let target = a.case.target()?;
    let fit = run_iterlap(&target, &starts(a.case, &a.start)?, &cfg)?;
    Ok(fit.to_json()? + "\n")
}

fn sample(a: &SampleArgs) -> CliResult<String> {
    let target = a.case.target()?;
    let fit: IterLapResult = match &a.from_file {
        Some(path) => serde_json::from_str(&read(path)?).map_err(iterlap::Error::from)?,
        None => {
            let cfg = a.tuning.config(a.common.seed)?;
            run_iterlap(&target, &starts(a.case, &a.start)?, &cfg)?
        }
    };
    if fit.mixture.dim() != target.dim() {
        return Err(CliError::Usage(format!(
            "approximation has dimension {}, `{}` has {}",
            fit.mixture.dim(),
            a.case,
            target.dim()
        )));
    }
    if a.samples == 0 {
        return Err(CliError::Usage("samples must be >= 1".into()));
    }
    let gauss = fit.normalized_mixture();
    let student;
    let proposal: &dyn Proposal = match a.df {
        Some(df) if !(df > 0.0) => return Err(CliError::Usage("df must be > 0".into())),
        Some(df) => {
            student = gauss.to_student(df)?;
            &student
        }
        None => &gauss,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    let s = importance_sample(&target, proposal, a.samples, &mut rng)?;
    if a.format == "csv" {
        Ok(s.to_csv())
    } else {
        to_json(&diagnostics(&s)?)
    }
}

fn benchmark(a: &BenchmarkArgs) -> CliResult<String> {
    let settings = BenchmarkSettings {
        reps: if a.paper_scale { 100 } else { a.reps },
        samples: a.samples,
        seed: a.common.seed,
        config: a.tuning.config(a.common.seed)?,
        start: a.start.as_ref().map(|p| p.0.clone()),
    };
    let methods = match a.method {
        Some(m) => vec![m],
        None => vec![Method::Laplace, Method::Iterlap],
    };
    let reports = methods
        .into_iter()
        .map(|m| run_benchmark(a.case, m, &settings))
        .collect::<CliResult<Vec<_>>>()?;
    emit_report(&reports, a.format)
}

fn enso(a: &EnsoArgs) -> CliResult<String> {
    let data = match &a.data {
        Some(p) => load_enso(p)?,
        None => EnsoDataset::builtin(),
    };
    let start = match &a.start {
        Some(p) => serde_json::from_str::<NistStart>(&read(p)?).map_err(iterlap::Error::from)?,
        None => nist_start(),
    };
    let settings = EnsoSettings {
        seed: a.common.seed,
        samples: a.samples,
        resample: a.resample,
        df: a.df,
        config: a.tuning.config(a.common.seed)?,
    };
    to_json(&run_enso(&data, &start.theta()?, &settings)?)
}

fn run(cli: &Cli) -> CliResult<()> {
    let (text, out) = match &cli.command {
        Command::Approximate(a) => (approximate(a)?, &a.common.out),
        Command::Sample(a) => (sample(a)?, &a.common.out),
        Command::Benchmark(a) => (benchmark(a)?, &a.common.out),
        Command::Enso(a) => (enso(a)?, &a.common.out),
    };
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io {
                path: "<stdout>".into(),
                source,
            }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("iterlap: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
