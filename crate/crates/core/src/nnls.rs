//! Non-negative least squares, `min ‖y − Fw‖²` subject to `w ≥ 0`.
//!
//! Lawson–Hanson active-set iteration on the normal equations of the
//! column-normalized design. Ties for the entering column go to the lowest index.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsProblem {
    pub f: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl NnlsProblem {
    pub fn new(f: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if f.nrows() == 0 || f.ncols() == 0 {
            return Err(Error::InvalidArgument("design matrix must be non-empty".into()));
        }
        if f.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: f.nrows(),
                got: y.len(),
            });
        }
        if f.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entry in NNLS problem".into()));
        }
        Ok(Self { f, y })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub w: DVector<f64>,
    /// `‖y − Fw‖²`, computed from the residual.
    pub rss: f64,
    /// Indices with `w = 0`, ascending.
    pub active: Vec<usize>,
    /// Outer (column-entering) iterations.
    pub iterations: usize,
}

/// `2Fᵀ(Fw − y)`, the gradient of the objective.
pub fn nnls_gradient(f: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    f.tr_mul(&(f * w - y)) * 2.0
}

/// The KKT tolerance `1e-8 ‖Fᵀy‖∞` used for verification.
pub fn kkt_tolerance(f: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    1e-8 * f.tr_mul(y).amax()
}

fn solve_passive(g: &DMatrix<f64>, b: &DVector<f64>, passive: &[usize]) -> DVector<f64> {
    let k = passive.len();
    let gp = DMatrix::from_fn(k, k, |i, j| g[(passive[i], passive[j])]);
    let bp = DVector::from_fn(k, |i, _| b[passive[i]]);
    match Cholesky::new(gp.clone()) {
        Some(c) => c.solve(&bp),
        None => gp
            .svd(true, true)
            .solve(&bp, 1e-14 * g.diagonal().amax())
            .unwrap_or_else(|_| DVector::zeros(k)),
    }
}

pub fn solve_nnls(problem: &NnlsProblem) -> Result<NnlsSolution> {
    let (f, y) = (&problem.f, &problem.y);
    let jn = f.ncols();
    let norms: Vec<f64> = f.column_iter().map(|c| c.norm()).collect();
    let usable: Vec<usize> = (0..jn).filter(|&j| norms[j] > 0.0).collect();

    let mut w_full = DVector::zeros(jn);
    let mut iterations = 0;
    if !usable.is_empty() {
        let a = DMatrix::from_fn(f.nrows(), usable.len(), |i, k| f[(i, usable[k])] / norms[usable[k]]);
        let g = a.tr_mul(&a);
        let b = a.tr_mul(y);
        let fty_max = usable
            .iter()
            .zip(b.iter())
            .fold(0.0f64, |m, (&j, bj)| m.max((norms[j] * bj).abs()));
        // Enforce the unscaled KKT bound with margin: 2 cⱼ |gⱼ| ≤ 1e-8 ‖Fᵀy‖∞ / 4.
        let tol: Vec<f64> = usable.iter().map(|&j| 0.125e-8 * fty_max / norms[j]).collect();

        let n = usable.len();
        let mut w = DVector::<f64>::zeros(n);
        let mut passive = vec![false; n];
        let max_outer = 3 * jn;
        loop {
            let dual = &b - &g * &w;
            let entering = (0..n)
                .filter(|&j| !passive[j] && dual[j] > tol[j])
                .fold(None, |best: Option<usize>, j| match best {
                    Some(bj) if dual[bj] >= dual[j] => Some(bj),
                    _ => Some(j),
                });
            let Some(enter) = entering else { break };
            if iterations >= max_outer {
                return Err(Error::ConvergenceFailure(format!(
                    "NNLS exceeded {max_outer} outer iterations"
                )));
            }
            iterations += 1;
            passive[enter] = true;

            loop {
                let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
                let z = solve_passive(&g, &b, &idx);
                if z.iter().all(|v| *v > 0.0) {
                    for (k, &j) in idx.iter().enumerate() {
                        w[j] = z[k];
                    }
                    break;
                }
                let mut alpha = f64::INFINITY;
                for (k, &j) in idx.iter().enumerate() {
                    if z[k] <= 0.0 {
                        let denom = w[j] - z[k];
                        let ratio = if denom > 0.0 { w[j] / denom } else { 0.0 };
                        alpha = alpha.min(ratio);
                    }
                }
                for (k, &j) in idx.iter().enumerate() {
                    w[j] += alpha * (z[k] - w[j]);
                }
                for (k, &j) in idx.iter().enumerate() {
                    if w[j] <= 0.0 || (z[k] <= 0.0 && w[j] <= 1e-15 * w.amax()) {
                        w[j] = 0.0;
                        passive[j] = false;
                    }
                }
                if !passive.iter().any(|p| *p) {
                    break;
                }
            }
        }
        for (k, &j) in usable.iter().enumerate() {
            w_full[j] = w[k] / norms[j];
        }
    }

    let resid = y - f * &w_full;
    let active = (0..jn).filter(|&j| w_full[j] == 0.0).collect();
    Ok(NnlsSolution {
        rss: resid.norm_squared(),
        w: w_full,
        active,
        iterations,
    })
}
