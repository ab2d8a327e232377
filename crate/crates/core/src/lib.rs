//! Gaussian-mixture approximations of unnormalized densities by iterated
//! Laplace approximations, with importance-sampling helpers.

pub mod error;
pub mod iterlap;
pub mod montecarlo;
pub mod mvn;
pub mod nnls;
pub mod optimize;
pub mod quasirandom;
pub mod special;
pub mod target;

pub use error::{Error, Result};
pub use iterlap::{run_iterlap, IterLapConfig, IterLapResult, StopReason};
pub use montecarlo::{
    estimate_z, importance_sample, independence_mh, ness, residual_resample, ImportanceSample, McDiagnostics, Proposal,
};
pub use mvn::{laplace_log_weight, laplace_weight, GaussComponent, Mixture, StudentMixture};
pub use nnls::{solve_nnls, NnlsProblem, NnlsSolution};
pub use optimize::{maximize, numerical_gradient, numerical_hessian, HessianResult, OptimConfig, OptimResult};
pub use quasirandom::{default_grid_size, gaussian_grid, SobolGenerator};
pub use target::TargetDensity;
