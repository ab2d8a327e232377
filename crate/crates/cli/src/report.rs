use std::fmt::Write as _;
use std::str::FromStr;

use crate::benchmark::BenchmarkReport;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    /// Fixed-width layout with NESS (sd) and moment-error columns.
    Table,
}

impl FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "table" => Ok(Format::Table),
            _ => Err(CliError::Usage(format!(
                "unknown format `{s}` (expected json, csv or table)"
            ))),
        }
    }
}

/// Serializes benchmark reports. JSON is an array of report objects; CSV has one
/// row per report; the table shows the first two coordinates.
pub fn emit_report(reports: &[BenchmarkReport], format: Format) -> CliResult<String> {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(reports).map_err(iterlap::Error::from)?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => Ok(csv(reports)),
        Format::Table => Ok(table(reports)),
    }
}

fn csv(reports: &[BenchmarkReport]) -> String {
    let p = reports.iter().map(|r| r.moment_errors.len()).max().unwrap_or(0);
    let mut header: Vec<String> = [
        "case",
        "method",
        "reps",
        "samples",
        "seed",
        "ness_mean",
        "ness_sd",
        "z_hat_mean",
        "z_hat_sd",
        "n_components",
        "n_evals",
        "stop_reason",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for k in 1..=p {
        header.push(format!("mean_err_x{k}"));
        header.push(format!("sd_err_x{k}"));
    }
    let mut out = header.join(",");
    out.push('\n');
    for r in reports {
        let mut row = vec![
            r.case.to_string(),
            r.method.to_string(),
            r.reps.to_string(),
            r.samples.to_string(),
            r.seed.to_string(),
            r.ness_mean.to_string(),
            r.ness_sd.to_string(),
            r.z_hat_mean.to_string(),
            r.z_hat_sd.to_string(),
            r.n_components.to_string(),
            r.n_evals.to_string(),
            r.stop_reason.clone(),
        ];
        for k in 0..p {
            match r.moment_errors.get(k) {
                Some(e) => {
                    row.push(e.mean.to_string());
                    row.push(e.sd.to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn table(reports: &[BenchmarkReport]) -> String {
    let mut out = format!(
        "{:<15} {:<8} {:<13} {:>8} {:>8} {:>8} {:>8}\n",
        "Case", "Method", "NESS", "Mean_x1", "sd_x1", "Mean_x2", "sd_x2"
    );
    for r in reports {
        let ness = format!("{:.2} ({:.2})", r.ness_mean, r.ness_sd);
        let cell = |k: usize, mean: bool| match r.moment_errors.get(k) {
            Some(e) => format!("{:.2}", if mean { e.mean } else { e.sd }),
            None => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:<15} {:<8} {:<13} {:>8} {:>8} {:>8} {:>8}",
            r.case.to_string(),
            r.method.to_string(),
            ness,
            cell(0, true),
            cell(0, false),
            cell(1, true),
            cell(1, false)
        );
    }
    out
}
