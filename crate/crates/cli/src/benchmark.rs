use std::fmt;
use std::str::FromStr;

use iterlap::iterlap::iteration_zero;
use iterlap::{estimate_z, importance_sample, ness, run_iterlap, IterLapConfig, Mixture};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cases::Case;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Single Gaussian at the mode found from the first start.
    Laplace,
    Iterlap,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Laplace => "laplace",
            Method::Iterlap => "iterlap",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "laplace" => Ok(Method::Laplace),
            "iterlap" => Ok(Method::Iterlap),
            _ => Err(CliError::Usage(format!(
                "unknown method `{s}` (expected laplace or iterlap)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkSettings {
    pub reps: usize,
    pub samples: usize,
    pub seed: u64,
    pub config: IterLapConfig,
    /// Optimizer start; the case default when `None`.
    pub start: Option<Vec<f64>>,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            reps: 20,
            samples: 10_000,
            seed: 1,
            config: IterLapConfig::default(),
            start: None,
        }
    }
}

/// Errors of the approximation's marginal moments, in units of the true sd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentError {
    pub coordinate: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub case: Case,
    pub method: Method,
    pub reps: usize,
    pub samples: usize,
    pub seed: u64,
    pub ness_mean: f64,
    pub ness_sd: f64,
    pub z_hat_mean: f64,
    pub z_hat_sd: f64,
    pub moment_errors: Vec<MomentError>,
    pub n_components: usize,
    pub n_evals: u64,
    pub stop_reason: String,
}

/// A built approximation, normalized to unit mass.
#[derive(Debug, Clone)]
pub struct Approximation {
    pub mixture: Mixture,
    pub n_components: usize,
    pub n_evals: u64,
    pub stop_reason: String,
}

pub fn build_approximation(
    case: Case,
    method: Method,
    cfg: &IterLapConfig,
    start: Option<&[f64]>,
) -> CliResult<Approximation> {
    let target = case.target()?;
    let start = match start {
        Some(s) => s.to_vec(),
        None => case.default_start()?,
    };
    if start.len() != target.dim() {
        return Err(CliError::Usage(format!(
            "start has {} coordinates, `{case}` needs {}",
            start.len(),
            target.dim()
        )));
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let before = target.eval_count();
    match method {
        Method::Iterlap => {
            let r = run_iterlap(&target, &[start], cfg)?;
            Ok(Approximation {
                mixture: r.normalized_mixture(),
                n_components: r.mixture.len(),
                n_evals: r.n_evals,
                stop_reason: r.stop_reason.name().to_string(),
            })
        }
        Method::Laplace => {
            let (_, mixture, _) = iteration_zero(&target, &[start], cfg)?;
            Ok(Approximation {
                mixture: Mixture::single(mixture.components()[0].clone(), 1.0)?,
                n_components: 1,
                n_evals: target.eval_count() - before,
                stop_reason: "Laplace".into(),
            })
        }
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Builds the approximation once, then runs `reps` independent importance-sampling
/// repetitions of `samples` draws each. Repetition `r` uses the ChaCha8 stream `r`
/// of the master seed, so results do not depend on thread scheduling.
pub fn run_benchmark(case: Case, method: Method, settings: &BenchmarkSettings) -> CliResult<BenchmarkReport> {
    if settings.reps == 0 || settings.samples == 0 {
        return Err(CliError::Usage("reps and samples must be >= 1".into()));
    }
    let approx = build_approximation(case, method, &settings.config, settings.start.as_deref())?;
    let target = case.target()?;

    let runs: Vec<(f64, f64)> = (0..settings.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(rep as u64);
            let s = importance_sample(&target, &approx.mixture, settings.samples, &mut rng)?;
            Ok((ness(&s)?, estimate_z(&s)?.z_hat))
        })
        .collect::<iterlap::Result<_>>()?;
    let (ness_mean, ness_sd) = mean_sd(&runs.iter().map(|r| r.0).collect::<Vec<_>>());
    let (z_hat_mean, z_hat_sd) = mean_sd(&runs.iter().map(|r| r.1).collect::<Vec<_>>());

    let moment_errors = match case.reference_moments()? {
        Some(truth) => {
            let mean = approx.mixture.mean()?;
            let sd = approx.mixture.covariance()?.diagonal().map(f64::sqrt);
            (0..truth.mean.len())
                .map(|k| MomentError {
                    coordinate: k + 1,
                    mean: (mean[k] - truth.mean[k]).abs() / truth.sd[k],
                    sd: (sd[k] - truth.sd[k]).abs() / truth.sd[k],
                })
                .collect()
        }
        None => Vec::new(),
    };

    Ok(BenchmarkReport {
        case,
        method,
        reps: settings.reps,
        samples: settings.samples,
        seed: settings.seed,
        ness_mean,
        ness_sd,
        z_hat_mean,
        z_hat_sd,
        moment_errors,
        n_components: approx.n_components,
        n_evals: approx.n_evals,
        stop_reason: approx.stop_reason,
    })
}
