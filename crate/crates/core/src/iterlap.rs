//! Iterated Laplace approximation.
//!
//! Iteration 0 places a Laplace component at each mode reachable from the
//! supplied starts. Each later iteration maximizes the (smoothed) residual
//! between the target and the current mixture, adds a Laplace component at
//! that maximum, extends the quasi-random grid and refits all weights by
//! non-negative least squares.
//!
//! Target values on the grid are kept on the rescaled scale
//! `π*(x) = exp(log π(x) − log M)`, where `log M` is the largest `log π` seen
//! on the grid so far. Mixture weights and `Z` live on the same scale; the
//! physical normalizing constant is `Z · exp(log M)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvn::{laplace_log_weight, GaussComponent, Mixture};
use crate::nnls::{solve_nnls, NnlsProblem};
use crate::optimize::{kmeans, maximize, numerical_hessian, OptimConfig};
use crate::quasirandom::{default_grid_size, gaussian_grid, SobolGenerator};
use crate::target::TargetDensity;

/// Floor applied to fitted values before taking logs when ranking grid rows.
const FITTED_FLOOR: f64 = 4.9e-324;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterLapConfig {
    /// Grid points per component; `None` uses `⌈50 p^1.25⌉`.
    pub n: Option<usize>,
    /// Max-error tolerance on the rescaled grid.
    pub delta: f64,
    /// Relative tolerance for the normalizing-constant criterion.
    pub eps: f64,
    /// Maximum number of components.
    pub max_components: usize,
    /// Starting values tried per iteration.
    pub k: usize,
    /// Grid rows fed to k-means.
    pub n_candidates: usize,
    /// Residual smoothing constant, on the rescaled scale.
    pub eps_tilde: f64,
    pub seed: u64,
    pub optim: OptimConfig,
}

impl Default for IterLapConfig {
    fn default() -> Self {
        Self {
            n: None,
            delta: 0.01,
            eps: 0.005,
            max_components: 20,
            k: 3,
            n_candidates: 10,
            eps_tilde: 1e-5,
            seed: 1,
            optim: OptimConfig::default(),
        }
    }
}

impl IterLapConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.delta, self.eps, self.eps_tilde, self.optim.gtol, self.optim.xtol];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("tolerances must be positive and finite".into()));
        }
        if self.max_components < 1 || self.k < 1 || self.n_candidates < 1 || self.n == Some(0) {
            return Err(Error::InvalidArgument(
                "max_components, k, n_candidates and n must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn grid_size(&self, p: usize) -> Result<usize> {
        match self.n {
            Some(n) => Ok(n),
            None => default_grid_size(p),
        }
    }
}

/// Grid points, rescaled target values and component densities.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    /// Grid points, one per row.
    pub x: DMatrix<f64>,
    /// `log π` at each row.
    pub log_pi: Vec<f64>,
    /// `exp(log π − log M)` at each row.
    pub y: DVector<f64>,
    /// Component densities, one column per mixture component.
    pub f: DMatrix<f64>,
    pub log_m: f64,
    /// Index of the component whose grid produced each row.
    pub row_source: Vec<usize>,
}

impl GridState {
    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn fitted(&self, weights: &[f64]) -> DVector<f64> {
        &self.f * DVector::from_column_slice(weights)
    }

    pub fn max_error(&self, weights: &[f64]) -> f64 {
        (&self.y - self.fitted(weights)).amax()
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }
}

/// Why a run terminated, with the value that triggered the rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason")]
pub enum StopReason {
    MaxErrorMet { max_error: f64 },
    ZConverged { relative_change: f64 },
    NoImprovementFound { failed_starts: usize },
    MaxComponentsReached { components: usize },
}

impl StopReason {
    pub fn name(&self) -> &'static str {
        match self {
            StopReason::MaxErrorMet { .. } => "MaxErrorMet",
            StopReason::ZConverged { .. } => "ZConverged",
            StopReason::NoImprovementFound { .. } => "NoImprovementFound",
            StopReason::MaxComponentsReached { .. } => "MaxComponentsReached",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub index: usize,
    pub iteration: usize,
    pub mean: Vec<f64>,
}

/// Iteration-0 diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialModes {
    pub modes: Vec<Vec<f64>>,
    /// Analytic Laplace log-weights `log((2π)^{p/2}|Σ|^{1/2}π(μ))`, physical scale.
    pub laplace_log_weights: Vec<f64>,
    /// Starts whose optimizer run failed or ended at a non-concave point.
    pub failed_starts: usize,
    /// Starts that converged to an already-found mode.
    pub duplicate_starts: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterLapResult {
    /// Mixture with weights on the rescaled scale.
    pub mixture: Mixture,
    #[serde(rename = "logM")]
    pub log_m: f64,
    /// `Z_t` for every iteration, expressed on the final rescaled scale.
    #[serde(rename = "Z_history")]
    pub z_history: Vec<f64>,
    /// Physical `log Z_t` for every iteration.
    pub log_z_history: Vec<f64>,
    pub max_error_history: Vec<f64>,
    pub stop_reason: StopReason,
    pub n_evals: u64,
    pub components_added_order: Vec<ComponentRecord>,
    pub iterations: usize,
    pub initial: InitialModes,
    #[serde(skip)]
    pub grid: Option<GridState>,
}

impl IterLapResult {
    /// Physical normalizing-constant estimate `Z · exp(log M)`.
    pub fn z_physical(&self) -> f64 {
        self.log_z_physical().exp()
    }

    pub fn log_z_physical(&self) -> f64 {
        self.mixture.z().ln() + self.log_m
    }

    /// The approximation with weights on the scale of `π` itself.
    pub fn physical_mixture(&self) -> Mixture {
        let mut m = self.mixture.clone();
        m.scale_weights(self.log_m.exp());
        m
    }

    /// The approximation normalized to total mass one.
    pub fn normalized_mixture(&self) -> Mixture {
        let mut m = self.mixture.clone();
        m.scale_weights(1.0 / self.mixture.z());
        m
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `r` if `r ≥ ε̃`, else `exp(r − ε̃) ε̃`.
pub fn smoothed_residual(r: f64, eps_tilde: f64) -> f64 {
    if r >= eps_tilde {
        r
    } else {
        (r - eps_tilde).exp() * eps_tilde
    }
}

/// Logarithm of [`smoothed_residual`], computed without forming the exponential.
pub fn log_smoothed_residual(r: f64, eps_tilde: f64) -> f64 {
    if r >= eps_tilde {
        r.ln()
    } else {
        r - eps_tilde + eps_tilde.ln()
    }
}

/// `π*(x) − π̃(x)` on the rescaled scale.
pub fn residual(target: &TargetDensity, mixture: &Mixture, log_m: f64, x: &[f64]) -> f64 {
    (target.eval(x) - log_m).exp() - mixture.pdf(x)
}

fn eval_rows(target: &TargetDensity, x: &DMatrix<f64>) -> Vec<f64> {
    let p = x.ncols();
    (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = (0..p).map(|k| x[(i, k)]).collect();
            target.eval(&row)
        })
        .collect()
}

fn density_column(c: &GaussComponent, x: &DMatrix<f64>, rows: std::ops::Range<usize>) -> Vec<f64> {
    let p = x.ncols();
    rows.into_par_iter()
        .map(|i| {
            let row: Vec<f64> = (0..p).map(|k| x[(i, k)]).collect();
            c.logpdf_unchecked(&row).exp()
        })
        .collect()
}

fn grid_generator(p: usize, cfg: &IterLapConfig) -> Result<SobolGenerator> {
    SobolGenerator::new(p, cfg.seed)
}

fn check_starts(target: &TargetDensity, starts: &[Vec<f64>]) -> Result<()> {
    if starts.is_empty() {
        return Err(Error::InvalidArgument("at least one starting value is required".into()));
    }
    for s in starts {
        if s.len() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                got: s.len(),
            });
        }
        if !target.eval(s).is_finite() {
            return Err(Error::InvalidArgument(format!(
                "log density is not finite at start {s:?}"
            )));
        }
    }
    Ok(())
}

/// Iteration 0: multi-mode Laplace approximation, initial grid and NNLS weights.
pub fn iteration_zero(
    target: &TargetDensity,
    starts: &[Vec<f64>],
    cfg: &IterLapConfig,
) -> Result<(GridState, Mixture, InitialModes)> {
    let mut gen = grid_generator(target.dim(), cfg)?;
    iteration_zero_with(target, starts, cfg, &mut gen)
}

fn iteration_zero_with(
    target: &TargetDensity,
    starts: &[Vec<f64>],
    cfg: &IterLapConfig,
    gen: &mut SobolGenerator,
) -> Result<(GridState, Mixture, InitialModes)> {
    cfg.validate()?;
    check_starts(target, starts)?;
    let p = target.dim();
    let n = cfg.grid_size(p)?;
    let logf = |x: &[f64]| target.eval(x);

    let mut components: Vec<GaussComponent> = Vec::new();
    let mut initial = InitialModes {
        modes: Vec::new(),
        laplace_log_weights: Vec::new(),
        failed_starts: 0,
        duplicate_starts: 0,
    };
    for start in starts {
        let opt = maximize(logf, start, &cfg.optim);
        if !opt.converged {
            initial.failed_starts += 1;
            continue;
        }
        let mu = DVector::from_column_slice(&opt.argmax);
        let duplicate = initial.modes.iter().any(|m| {
            let m = DVector::from_column_slice(m);
            (&m - &mu).norm() < 1e-4 * (1.0 + m.norm())
        });
        if duplicate {
            initial.duplicate_starts += 1;
            continue;
        }
        let Some(cov) = numerical_hessian(&logf, &opt.argmax).ok().and_then(|h| h.neg_inv) else {
            initial.failed_starts += 1;
            continue;
        };
        let Ok(c) = GaussComponent::new(mu, cov) else {
            initial.failed_starts += 1;
            continue;
        };
        initial.laplace_log_weights.push(laplace_log_weight(&c, opt.value));
        initial.modes.push(opt.argmax);
        components.push(c);
    }
    if components.is_empty() {
        return Err(Error::NoInitialMode(starts.len()));
    }

    let j = components.len();
    let mut x = DMatrix::zeros(n * j, p);
    let mut row_source = Vec::with_capacity(n * j);
    for (idx, c) in components.iter().enumerate() {
        let block = gaussian_grid(c, n, gen)?;
        x.view_mut((idx * n, 0), (n, p)).copy_from(&block);
        row_source.extend(std::iter::repeat_n(idx, n));
    }
    let log_pi = eval_rows(target, &x);
    let log_m = log_pi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !log_m.is_finite() {
        return Err(Error::InvalidState(
            "target density vanishes on the whole initial grid".into(),
        ));
    }
    let y = DVector::from_iterator(log_pi.len(), log_pi.iter().map(|l| (l - log_m).exp()));
    let mut f = DMatrix::zeros(n * j, j);
    for (idx, c) in components.iter().enumerate() {
        f.set_column(idx, &DVector::from_vec(density_column(c, &x, 0..n * j)));
    }
    let state = GridState {
        x,
        log_pi,
        y,
        f,
        log_m,
        row_source,
    };
    let (weights, _) = fit_weights(&state)?;
    let mixture = Mixture::new(weights, components)?;
    Ok((state, mixture, initial))
}

/// NNLS weights for the current grid and their sum `Z_t` (rescaled scale).
pub fn fit_weights(state: &GridState) -> Result<(Vec<f64>, f64)> {
    let problem = NnlsProblem::new(state.f.clone(), state.y.clone())?;
    let sol = solve_nnls(&problem)?;
    let w: Vec<f64> = sol.w.iter().copied().collect();
    let z = w.iter().sum();
    Ok((w, z))
}

/// Ranks grid rows by `log y − log ŷ`, clusters the best `n_candidates` with
/// k-means and orders the centers by decreasing distance to `last_mode`.
pub fn select_starting_values(
    state: &GridState,
    fitted: &DVector<f64>,
    last_mode: &[f64],
    cfg: &IterLapConfig,
) -> Result<Vec<Vec<f64>>> {
    if state.rows() == 0 {
        return Err(Error::InvalidState("empty grid".into()));
    }
    let ratio: Vec<f64> = state
        .y
        .iter()
        .zip(fitted.iter())
        .map(|(y, yh)| y.ln() - yh.max(FITTED_FLOOR).ln())
        .collect();
    let mut order: Vec<usize> = (0..state.rows()).collect();
    order.sort_by(|&a, &b| ratio[b].total_cmp(&ratio[a]));
    let candidates: Vec<Vec<f64>> = order
        .iter()
        .take(cfg.n_candidates.min(state.rows()))
        .map(|&i| state.row(i))
        .collect();
    let k = cfg.k.min(candidates.len());
    let clusters = kmeans(&candidates, k, cfg.seed)?;
    let dist = |c: &[f64]| -> f64 { c.iter().zip(last_mode).map(|(a, b)| (a - b) * (a - b)).sum() };
    let mut centers = clusters.centers;
    centers.sort_by(|a, b| dist(b).total_cmp(&dist(a)));
    Ok(centers)
}

/// Outcome of one residual search.
#[derive(Debug, Clone)]
pub struct ResidualStep {
    pub component: Option<GaussComponent>,
    /// Starting values tried before success or exhaustion.
    pub attempts: usize,
}

/// Tries each starting value in turn; the first start whose optimizer converges
/// inside `{r ≥ ε̃}` with a negative-definite Hessian yields the new component.
pub fn residual_laplace_step(
    target: &TargetDensity,
    mixture: &Mixture,
    log_m: f64,
    starts: &[Vec<f64>],
    cfg: &IterLapConfig,
) -> ResidualStep {
    let objective = |x: &[f64]| log_smoothed_residual(residual(target, mixture, log_m, x), cfg.eps_tilde);
    let mut attempts = 0;
    for start in starts {
        attempts += 1;
        let opt = maximize(objective, start, &cfg.optim);
        if !opt.converged {
            continue;
        }
        if residual(target, mixture, log_m, &opt.argmax) < cfg.eps_tilde {
            continue;
        }
        let Some(cov) = numerical_hessian(&objective, &opt.argmax).ok().and_then(|h| h.neg_inv) else {
            continue;
        };
        if let Ok(c) = GaussComponent::new(DVector::from_vec(opt.argmax), cov) {
            return ResidualStep {
                component: Some(c),
                attempts,
            };
        }
    }
    ResidualStep {
        component: None,
        attempts,
    }
}

/// Appends the grid of `new_comp`, evaluates the target there and borders `F`.
/// Returns the increase in `log M` (zero if unchanged).
pub fn extend_grid(
    target: &TargetDensity,
    state: &mut GridState,
    mixture: &Mixture,
    new_comp: &GaussComponent,
    gen: &mut SobolGenerator,
    cfg: &IterLapConfig,
) -> Result<f64> {
    let p = target.dim();
    let n = cfg.grid_size(p)?;
    let old_rows = state.rows();
    let j_old = mixture.len();
    if state.f.ncols() != j_old {
        return Err(Error::InvalidState(
            "grid columns and mixture components disagree".into(),
        ));
    }
    let block = gaussian_grid(new_comp, n, gen)?;
    let new_log_pi = eval_rows(target, &block);

    let rows = old_rows + n;
    let mut x = DMatrix::zeros(rows, p);
    x.view_mut((0, 0), (old_rows, p)).copy_from(&state.x);
    x.view_mut((old_rows, 0), (n, p)).copy_from(&block);

    let block_max = new_log_pi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = if block_max > state.log_m {
        block_max - state.log_m
    } else {
        0.0
    };
    let log_m = state.log_m + shift;
    state.log_pi.extend_from_slice(&new_log_pi);
    let y = if shift > 0.0 {
        DVector::from_iterator(rows, state.log_pi.iter().map(|l| (l - log_m).exp()))
    } else {
        let mut y = state.y.clone().resize_vertically(rows, 0.0);
        for (i, l) in new_log_pi.iter().enumerate() {
            y[old_rows + i] = (l - log_m).exp();
        }
        y
    };

    let mut f = DMatrix::zeros(rows, j_old + 1);
    f.view_mut((0, 0), (old_rows, j_old)).copy_from(&state.f);
    for (idx, c) in mixture.components().iter().enumerate() {
        let col = density_column(c, &x, old_rows..rows);
        for (i, v) in col.into_iter().enumerate() {
            f[(old_rows + i, idx)] = v;
        }
    }
    f.set_column(j_old, &DVector::from_vec(density_column(new_comp, &x, 0..rows)));

    state.x = x;
    state.y = y;
    state.f = f;
    state.log_m = log_m;
    state.row_source.extend(std::iter::repeat_n(j_old, n));
    Ok(shift)
}

/// Stopping rules, checked in the order max error, `Z` convergence, component cap.
/// `z_history` holds `Z_0..Z_t` on a common scale.
pub fn check_stop(max_error: f64, z_history: &[f64], components: usize, cfg: &IterLapConfig) -> Option<StopReason> {
    if max_error < cfg.delta {
        return Some(StopReason::MaxErrorMet { max_error });
    }
    if let [.., z2, z1, z] = z_history {
        let relative_change = (z - 0.5 * (z1 + z2)).abs() / z;
        if relative_change < cfg.eps {
            return Some(StopReason::ZConverged { relative_change });
        }
    }
    if components >= cfg.max_components {
        return Some(StopReason::MaxComponentsReached { components });
    }
    None
}

/// Runs the full procedure from the given iteration-0 starts.
pub fn run_iterlap(target: &TargetDensity, starts: &[Vec<f64>], cfg: &IterLapConfig) -> Result<IterLapResult> {
    let evals_before = target.eval_count();
    let mut gen = grid_generator(target.dim(), cfg)?;
    let (mut state, mut mixture, initial) = iteration_zero_with(target, starts, cfg, &mut gen)?;

    let mut z_history = vec![mixture.z()];
    let mut max_error_history = vec![state.max_error(mixture.weights())];
    let mut components_added_order: Vec<ComponentRecord> = initial
        .modes
        .iter()
        .enumerate()
        .map(|(index, mean)| ComponentRecord {
            index,
            iteration: 0,
            mean: mean.clone(),
        })
        .collect();
    let mut last_mode = initial.modes.last().cloned().unwrap_or_default();
    let mut t = 0;
    let mut stop = check_stop(max_error_history[0], &z_history, mixture.len(), cfg);

    while stop.is_none() {
        t += 1;
        let fitted = state.fitted(mixture.weights());
        let starts = select_starting_values(&state, &fitted, &last_mode, cfg)?;
        let step = residual_laplace_step(target, &mixture, state.log_m, &starts, cfg);
        let Some(comp) = step.component else {
            stop = Some(StopReason::NoImprovementFound {
                failed_starts: step.attempts,
            });
            break;
        };
        let shift = extend_grid(target, &mut state, &mixture, &comp, &mut gen, cfg)?;
        if shift > 0.0 {
            let factor = (-shift).exp();
            z_history.iter_mut().for_each(|z| *z *= factor);
        }
        last_mode = comp.mean().iter().copied().collect();
        components_added_order.push(ComponentRecord {
            index: mixture.len(),
            iteration: t,
            mean: last_mode.clone(),
        });
        mixture.push(0.0, comp)?;
        let (weights, z) = fit_weights(&state)?;
        mixture.set_weights(weights)?;
        z_history.push(z);
        max_error_history.push(state.max_error(mixture.weights()));
        stop = check_stop(*max_error_history.last().unwrap(), &z_history, mixture.len(), cfg);
    }

    let log_z_history = z_history.iter().map(|z| z.ln() + state.log_m).collect();
    Ok(IterLapResult {
        mixture,
        log_m: state.log_m,
        z_history,
        log_z_history,
        max_error_history,
        stop_reason: stop.expect("loop exits with a stop reason"),
        n_evals: target.eval_count() - evals_before,
        components_added_order,
        iterations: t,
        initial,
        grid: Some(state),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{f2, gaussian_kernel, illustration1d, standard_normal_kernel, trimodal_mixture};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cfg() -> IterLapConfig {
        IterLapConfig::default()
    }

    #[test]
    fn smoothed_residual_branches() {
        assert_eq!(smoothed_residual(0.5, 1e-5), 0.5);
        assert_eq!(smoothed_residual(1e-5, 1e-5), 1e-5);
        let v = smoothed_residual(-1.0, 1e-5);
        assert_abs_diff_eq!(v, (-1.0f64 - 1e-5).exp() * 1e-5, epsilon = 1e-20);
        assert!((v - 3.6788e-6).abs() < 1e-9);
        for r in [-3.0, -1e-3, 0.0, 5e-6, 1e-5, 0.2] {
            assert_abs_diff_eq!(
                log_smoothed_residual(r, 1e-5),
                smoothed_residual(r, 1e-5).ln(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(IterLapConfig { delta: 0.0, ..cfg() }.validate().is_err());
        assert!(IterLapConfig { k: 0, ..cfg() }.validate().is_err());
        assert!(IterLapConfig { n: Some(0), ..cfg() }.validate().is_err());
        assert_eq!(cfg().grid_size(2).unwrap(), 119);
        assert_eq!(IterLapConfig { n: Some(7), ..cfg() }.grid_size(2).unwrap(), 7);
    }

    #[test]
    fn iteration_zero_on_standard_normal() {
        let t = standard_normal_kernel(2);
        let (state, mix, init) = iteration_zero(&t, &[vec![0.0, 0.0]], &cfg()).unwrap();
        assert_eq!(mix.len(), 1);
        let c = &mix.components()[0];
        assert!(c.mean().amax() < 1e-5);
        assert!((c.cov() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-5);
        let z = mix.z() * state.log_m.exp();
        assert!((z - 2.0 * PI).abs() < 1e-4, "{z}");
        assert_abs_diff_eq!(init.laplace_log_weights[0], (2.0 * PI).ln(), epsilon = 1e-8);
    }

    #[test]
    fn duplicate_modes_are_merged() {
        let t = standard_normal_kernel(2);
        let (_, mix, init) = iteration_zero(&t, &[vec![0.5, 0.5], vec![-0.3, 0.2]], &cfg()).unwrap();
        assert_eq!(mix.len(), 1);
        assert_eq!(init.duplicate_starts, 1);
    }

    #[test]
    fn iteration_zero_on_illustration() {
        let t = illustration1d();
        let (_, mix, _) = iteration_zero(&t, &[vec![0.0]], &cfg()).unwrap();
        assert_eq!(mix.len(), 1);
        let oracle = (0..=200_000)
            .map(|i| -0.2 + i as f64 * 1e-6)
            .max_by(|a, b| t.eval(&[*a]).total_cmp(&t.eval(&[*b])))
            .unwrap();
        assert_abs_diff_eq!(mix.components()[0].mean()[0], oracle, epsilon = 1e-5);
    }

    #[test]
    fn no_initial_mode_for_convex_target() {
        let t = TargetDensity::new("bowl", 1, |x: &[f64]| x[0] * x[0]);
        assert!(matches!(
            iteration_zero(&t, &[vec![0.1]], &cfg()),
            Err(Error::NoInitialMode(1))
        ));
        assert!(iteration_zero(&t, &[], &cfg()).is_err());
        assert!(iteration_zero(&t, &[vec![0.0, 1.0]], &cfg()).is_err());
    }

    #[test]
    fn check_stop_rules() {
        let c = cfg();
        assert!(matches!(
            check_stop(0.005, &[1.0], 1, &c),
            Some(StopReason::MaxErrorMet { .. })
        ));
        match check_stop(0.5, &[2.0, 2.0, 2.0], 3, &c) {
            Some(StopReason::ZConverged { relative_change }) => assert_eq!(relative_change, 0.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(check_stop(0.5, &[2.0, 2.0], 2, &c).is_none());
        assert!(matches!(
            check_stop(0.5, &[1.0, 2.0, 3.0], 20, &c),
            Some(StopReason::MaxComponentsReached { components: 20 })
        ));
        assert!(check_stop(0.5, &[1.0, 2.0, 3.0], 19, &c).is_none());
        // Max error takes precedence when several rules hold.
        assert!(matches!(
            check_stop(0.001, &[2.0, 2.0, 2.0], 20, &c),
            Some(StopReason::MaxErrorMet { .. })
        ));
    }

    fn toy_state(y: Vec<f64>, fitted_cols: DMatrix<f64>, x: DMatrix<f64>) -> GridState {
        let n = y.len();
        GridState {
            log_pi: y.iter().map(|v| v.ln()).collect(),
            y: DVector::from_vec(y),
            f: fitted_cols,
            x,
            log_m: 0.0,
            row_source: vec![0; n],
        }
    }

    #[test]
    fn equal_ratios_take_first_rows() {
        let m = 15;
        let x = DMatrix::from_fn(m, 1, |i, _| i as f64);
        let state = toy_state(vec![0.5; m], DMatrix::from_element(m, 1, 1.0), x);
        let fitted = state.fitted(&[0.5]);
        let c = IterLapConfig { k: 3, ..cfg() };
        let starts = select_starting_values(&state, &fitted, &[0.0], &c).unwrap();
        assert_eq!(starts.len(), 3);
        for s in &starts {
            assert!(s[0] <= 9.0);
        }
        for w in starts.windows(2) {
            assert!(w[0][0].abs() >= w[1][0].abs());
        }
    }

    #[test]
    fn peaked_ratio_far_from_last_mode_comes_first() {
        let m = 20;
        let x = DMatrix::from_fn(m, 1, |i, _| i as f64);
        let mut y = vec![0.1; m];
        y[19] = 10.0;
        let state = toy_state(y, DMatrix::from_element(m, 1, 1.0), x);
        let fitted = state.fitted(&[0.1]);
        let starts = select_starting_values(&state, &fitted, &[0.0], &cfg()).unwrap();
        assert_eq!(starts[0], vec![19.0]);
    }

    #[test]
    fn unfit_second_mode_is_found_first() {
        // f2 with Laplace fits at (0,0) and (2,2); the mode at (-3,-3) is unfit.
        let t = f2();
        let c = cfg();
        let (state, mix, _) = iteration_zero(&t, &[vec![0.0, 0.0], vec![2.0, 2.0]], &c).unwrap();
        assert_eq!(mix.len(), 2);
        let mu = mix.components()[1].mean().clone();
        let fitted = state.fitted(mix.weights());
        let starts = select_starting_values(&state, &fitted, mu.as_slice(), &c).unwrap();
        let dist = |a: &[f64], m: [f64; 2]| ((a[0] - m[0]).powi(2) + (a[1] - m[1]).powi(2)).sqrt();
        let first = &starts[0];
        let modes = [[0.0, 0.0], [-3.0, -3.0], [2.0, 2.0]];
        let nearest = modes
            .iter()
            .min_by(|a, b| dist(first, **a).total_cmp(&dist(first, **b)))
            .unwrap();
        assert_eq!(*nearest, [-3.0, -3.0], "starts {starts:?}");
        let step = residual_laplace_step(&t, &mix, state.log_m, &starts[..1], &c);
        let comp = step.component.expect("residual mode found");
        assert!(dist(comp.mean().as_slice(), [-3.0, -3.0]) < 1.0, "{}", comp.mean());
    }

    #[test]
    fn residual_step_finds_second_gaussian() {
        let a = GaussComponent::from_slices(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = GaussComponent::from_slices(&[6.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let truth = Mixture::new(vec![1.0, 1.0], vec![a.clone(), b]).unwrap();
        let t = TargetDensity::new("two", 2, move |x: &[f64]| truth.logpdf_unchecked(x));
        let log_m = t.eval(&[0.0, 0.0]);
        let approx = Mixture::single(a, log_m.exp().recip()).unwrap();
        let starts = vec![vec![5.0, 0.5], vec![0.0, 0.0]];
        let step = residual_laplace_step(&t, &approx, log_m, &starts, &cfg());
        let c = step.component.expect("component found");
        assert!(
            (c.mean()[0] - 6.0).abs() < 0.1 && c.mean()[1].abs() < 0.1,
            "{}",
            c.mean()
        );
        // Oracle: grid search of the residual.
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..=400 {
            for j in 0..=100 {
                let (x1, x2) = (3.0 + i as f64 * 0.01, -0.5 + j as f64 * 0.01);
                let r = residual(&t, &approx, log_m, &[x1, x2]);
                if r > best.0 {
                    best = (r, x1, x2);
                }
            }
        }
        assert!((c.mean()[0] - best.1).abs() < 0.02 && (c.mean()[1] - best.2).abs() < 0.02);
    }

    #[test]
    fn exact_fit_leaves_no_component() {
        let t = standard_normal_kernel(2);
        let log_m = 0.0;
        let exact = Mixture::single(GaussComponent::standard(2), 2.0 * PI).unwrap();
        let step = residual_laplace_step(&t, &exact, log_m, &[vec![1.0, 1.0], vec![-2.0, 0.5]], &cfg());
        assert!(step.component.is_none());
        assert_eq!(step.attempts, 2);
    }

    #[test]
    fn flat_ridge_start_is_rejected_then_next_tried() {
        // Residual is a ridge in x2 (no curvature) when x1 < 0 and a bump at (3, 0).
        let t = TargetDensity::new("ridge", 2, |x: &[f64]| {
            if x[0] < 0.0 {
                -0.5 * (x[0] + 3.0).powi(2)
            } else {
                -0.5 * ((x[0] - 3.0).powi(2) + x[1] * x[1])
            }
        });
        let empty = Mixture::single(GaussComponent::standard(2), 0.0).unwrap();
        let step = residual_laplace_step(&t, &empty, 0.0, &[vec![-3.0, 0.0], vec![2.5, 0.3]], &cfg());
        let c = step.component.expect("second start succeeds");
        assert_eq!(step.attempts, 2);
        assert!((c.mean()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn extend_grid_bookkeeping() {
        let t = f2();
        let c = IterLapConfig { n: Some(40), ..cfg() };
        let mut gen = SobolGenerator::new(2, 3).unwrap();
        let (mut state, mut mix, _) = iteration_zero_with(&t, &[vec![0.0, 0.0]], &c, &mut gen).unwrap();
        let old_f = state.f.clone();
        let old_y = state.y.clone();
        let comp = GaussComponent::from_slices(&[3.0, 3.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let shift = extend_grid(&t, &mut state, &mix, &comp, &mut gen, &c).unwrap();
        mix.push(0.0, comp).unwrap();
        assert_eq!(state.rows(), 80);
        assert_eq!(state.f.ncols(), 2);
        assert_eq!(state.row_source[79], 1);
        assert_eq!(shift, 0.0);
        for i in 0..40 {
            assert_eq!(state.f[(i, 0)].to_bits(), old_f[(i, 0)].to_bits());
            assert_eq!(state.y[i].to_bits(), old_y[i].to_bits());
        }
        for i in 0..80 {
            assert_abs_diff_eq!(state.y[i], (state.log_pi[i] - state.log_m).exp(), epsilon = 1e-15);
        }
    }

    #[test]
    fn extend_grid_rescales_when_log_m_rises() {
        // Start from a poor mode guess so the new grid sees higher density.
        let t = gaussian_kernel(&[0.0], &[1.0]).unwrap();
        let c = IterLapConfig { n: Some(30), ..cfg() };
        let mut gen = SobolGenerator::new(1, 5).unwrap();
        let comp0 = GaussComponent::from_slices(&[4.0], &[0.25]).unwrap();
        let x = gaussian_grid(&comp0, 30, &mut gen).unwrap();
        let log_pi = eval_rows(&t, &x);
        let log_m = log_pi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let y = DVector::from_iterator(30, log_pi.iter().map(|l| (l - log_m).exp()));
        let f = DMatrix::from_column_slice(30, 1, &density_column(&comp0, &x, 0..30));
        let mut state = GridState {
            x,
            log_pi,
            y: y.clone(),
            f,
            log_m,
            row_source: vec![0; 30],
        };
        let mix = Mixture::single(comp0, 1.0).unwrap();
        let comp1 = GaussComponent::from_slices(&[0.0], &[1.0]).unwrap();
        let shift = extend_grid(&t, &mut state, &mix, &comp1, &mut gen, &c).unwrap();
        assert!(shift > 0.0);
        for i in 0..30 {
            assert!((state.y[i] - y[i] * (-shift).exp()).abs() <= 1e-12 * y[i].max(1e-300));
        }
    }

    #[test]
    fn representable_weights_are_recovered() {
        let a = GaussComponent::from_slices(&[0.0], &[1.0]).unwrap();
        let b = GaussComponent::from_slices(&[3.0], &[0.5]).unwrap();
        let x = DMatrix::from_fn(60, 1, |i, _| -4.0 + i as f64 * 0.15);
        let fa = density_column(&a, &x, 0..60);
        let fb = density_column(&b, &x, 0..60);
        let f = DMatrix::from_fn(60, 2, |i, j| if j == 0 { fa[i] } else { fb[i] });
        let y = &f * DVector::from_vec(vec![0.7, 0.2]);
        let state = GridState {
            log_pi: y.iter().map(|v| v.ln()).collect(),
            y,
            f,
            x,
            log_m: 0.0,
            row_source: vec![0; 60],
        };
        let (w, z) = fit_weights(&state).unwrap();
        assert_abs_diff_eq!(w[0], 0.7, epsilon = 1e-8);
        assert_abs_diff_eq!(w[1], 0.2, epsilon = 1e-8);
        assert_abs_diff_eq!(z, 0.9, epsilon = 1e-8);
    }

    #[test]
    fn irrelevant_component_gets_zero_weight() {
        let t = standard_normal_kernel(1);
        let c = IterLapConfig { n: Some(50), ..cfg() };
        let mut gen = SobolGenerator::new(1, 2).unwrap();
        let (mut state, mut mix, _) = iteration_zero_with(&t, &[vec![0.3]], &c, &mut gen).unwrap();
        let far = GaussComponent::from_slices(&[40.0], &[1.0]).unwrap();
        extend_grid(&t, &mut state, &mix, &far, &mut gen, &c).unwrap();
        mix.push(0.0, far).unwrap();
        let (w, _) = fit_weights(&state).unwrap();
        assert_eq!(w[1], 0.0);
        assert_abs_diff_eq!(w[0] * state.log_m.exp(), (2.0 * PI).sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn gaussian_target_stops_immediately() {
        let t = gaussian_kernel(&[1.0, -2.0], &[2.0, 0.6, 0.6, 1.0]).unwrap();
        let r = run_iterlap(&t, &[vec![0.0, 0.0]], &cfg()).unwrap();
        assert!(matches!(r.stop_reason, StopReason::MaxErrorMet { .. }));
        assert_eq!(r.mixture.len(), 1);
        assert_eq!(r.iterations, 0);
        let truth = 2.0 * PI * (2.0f64 - 0.36).sqrt();
        assert!((r.z_physical() / truth - 1.0).abs() < 1e-3);
    }

    #[test]
    fn separated_two_component_target_is_represented() {
        let truth = Mixture::new(
            vec![2.0, 1.0],
            vec![
                GaussComponent::from_slices(&[-3.0, 0.0], &[1.0, 0.3, 0.3, 1.0]).unwrap(),
                GaussComponent::from_slices(&[4.0, 1.0], &[0.5, 0.0, 0.0, 2.0]).unwrap(),
            ],
        )
        .unwrap();
        let t = TargetDensity::new("pair", 2, move |x: &[f64]| truth.logpdf_unchecked(x));
        let c = cfg();
        let r = run_iterlap(&t, &[vec![-3.0, 0.0], vec![4.0, 1.0]], &c).unwrap();
        assert_eq!(r.initial.modes.len(), 2);
        assert!(
            r.max_error_history.last().unwrap() < &c.delta,
            "{:?}",
            r.max_error_history
        );
        assert!((r.z_physical() / 3.0 - 1.0).abs() < 0.01, "{}", r.z_physical());
    }

    #[test]
    fn run_is_deterministic_and_counts_evaluations() {
        let t = f2();
        let a = run_iterlap(&t, &[vec![0.0, 0.0]], &cfg()).unwrap();
        t.reset_count();
        let b = run_iterlap(&t, &[vec![0.0, 0.0]], &cfg()).unwrap();
        assert_eq!(b.n_evals, t.eval_count());
        let bits = |r: &IterLapResult| r.z_history.iter().map(|z| z.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn f2_run_invariants() {
        let t = f2();
        let c = cfg();
        let r = run_iterlap(&t, &[vec![0.0, 0.0]], &c).unwrap();
        let grid = r.grid.as_ref().unwrap();
        let n = c.grid_size(2).unwrap();
        assert_eq!(grid.rows(), n * r.mixture.len());
        assert_eq!(grid.f.ncols(), r.mixture.len());
        assert!(r.mixture.weights().iter().all(|w| *w >= 0.0));
        assert_eq!(r.z_history.len(), r.iterations + 1);
        assert_eq!(*r.z_history.last().unwrap(), r.mixture.z());
        for (z, lz) in r.z_history.iter().zip(&r.log_z_history) {
            assert_abs_diff_eq!(z.ln() + r.log_m, *lz, epsilon = 1e-12);
        }
        for i in 0..grid.rows() {
            assert_abs_diff_eq!(grid.y[i], (grid.log_pi[i] - grid.log_m).exp(), epsilon = 1e-15);
        }
        // The trimodal target is normalized.
        assert!(
            (r.z_physical() - trimodal_mixture().z()).abs() < 0.05,
            "{}",
            r.z_physical()
        );
    }
}
