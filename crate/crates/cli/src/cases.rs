//! Named experiment targets and their reference moments.

use std::fmt;
use std::str::FromStr;

use iterlap::target::{self, EnsoDataset, EnsoPrior, TargetDensity};
use iterlap::{GaussComponent, Mixture};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    F1,
    F2,
    F3,
    Illustration1d,
    Enso,
}

impl Case {
    pub const ALL: [Case; 5] = [Case::F1, Case::F2, Case::F3, Case::Illustration1d, Case::Enso];

    pub fn name(self) -> &'static str {
        match self {
            Case::F1 => "f1",
            Case::F2 => "f2",
            Case::F3 => "f3",
            Case::Illustration1d => "illustration1d",
            Case::Enso => "enso",
        }
    }

    /// The target density; `enso` uses the bundled data set.
    pub fn target(self) -> CliResult<TargetDensity> {
        Ok(match self {
            Case::F1 => target::f1(),
            Case::F2 => target::f2(),
            Case::F3 => target::f3(),
            Case::Illustration1d => target::illustration1d(),
            Case::Enso => target::make_enso_posterior(&EnsoDataset::builtin(), EnsoPrior::default())?,
        })
    }

    pub fn dim(self) -> usize {
        match self {
            Case::F1 | Case::F2 => 2,
            Case::F3 => 10,
            Case::Illustration1d => 1,
            Case::Enso => target::ENSO_DIM,
        }
    }

    /// Zero vector, or the certified least-squares point for `enso`.
    pub fn default_start(self) -> CliResult<Vec<f64>> {
        match self {
            Case::Enso => Ok(target::nist_start().theta()?),
            c => Ok(vec![0.0; c.dim()]),
        }
    }

    /// Exact marginal means and standard deviations, where known in closed form.
    pub fn reference_moments(self) -> CliResult<Option<ReferenceMoments>> {
        let from_mixture = |m: &Mixture| -> CliResult<ReferenceMoments> {
            let cov = m.covariance()?;
            Ok(ReferenceMoments {
                mean: m.mean()?,
                sd: cov.diagonal().map(f64::sqrt),
            })
        };
        Ok(match self {
            Case::F1 => {
                let (mean, cov) = target::skew_t_moments(&[0.0, 0.0], &[1.0, -0.9, -0.9, 1.0], &[0.0, 15.0], 5.0)?;
                Some(ReferenceMoments {
                    mean,
                    sd: cov.diagonal().map(f64::sqrt),
                })
            }
            Case::F2 => Some(from_mixture(&target::trimodal_mixture())?),
            Case::F3 => {
                // x₂ = z − b(x₁² − σ₁²) with x₁ ~ N(0, σ₁²): Var x₂ = 1 + 2b²σ₁⁴.
                let (b, s1): (f64, f64) = (0.03, 100.0);
                let mut sd = DVector::from_element(10, 1.0);
                sd[0] = s1.sqrt();
                sd[1] = (1.0 + 2.0 * b * b * s1 * s1).sqrt();
                Some(ReferenceMoments {
                    mean: DVector::zeros(10),
                    sd,
                })
            }
            Case::Illustration1d => {
                let m = Mixture::new(
                    vec![1.0 / 1.5, 0.5 / 1.5],
                    vec![
                        GaussComponent::from_slices(&[0.0], &[1.0])?,
                        GaussComponent::from_slices(&[-3.0], &[4.0])?,
                    ],
                )?;
                Some(from_mixture(&m)?)
            }
            Case::Enso => None,
        })
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Case {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Case::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown case `{s}` (expected f1, f2, f3, illustration1d or enso)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMoments {
    pub mean: DVector<f64>,
    pub sd: DVector<f64>,
}
