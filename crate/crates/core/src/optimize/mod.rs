//! Local maximization of log-objectives.
//!
//! [`maximize`] runs BFGS on `-f` with central-difference gradients and an
//! Armijo backtracking line search. After two failed line searches it hands
//! over to Nelder–Mead.

mod diff;
mod kmeans;

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use diff::{gradient_step, hessian_step, numerical_gradient, numerical_hessian, HessianResult};
pub use kmeans::{kmeans, KMeans};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    /// Gradient tolerance, scaled by `1 + |f|`.
    pub gtol: f64,
    /// Step tolerance, scaled by `1 + ‖x‖∞`.
    pub xtol: f64,
    pub max_iter: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            gtol: 1e-6,
            xtol: 1e-10,
            max_iter: 200,
        }
    }
}

impl OptimConfig {
    pub fn gradient_tolerance(&self, value: f64) -> f64 {
        self.gtol * (1.0 + value.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub argmax: Vec<f64>,
    pub value: f64,
    /// Max-norm of the gradient at `argmax`; infinite if it could not be formed.
    pub grad_norm: f64,
    pub converged: bool,
    pub n_evals: usize,
    pub iterations: usize,
    /// Objective at each accepted iterate, starting point first.
    pub accepted_values: Vec<f64>,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const MAX_LINE_SEARCH_FAILURES: usize = 2;

/// Maximizes `f` from `start`. A NaN or non-finite start yields `converged = false`.
pub fn maximize<F>(f: F, start: &[f64], cfg: &OptimConfig) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    let count = Cell::new(0usize);
    let obj = |x: &[f64]| {
        count.set(count.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let p = start.len();
    let mut x = DVector::from_column_slice(start);
    let mut fx = obj(x.as_slice());
    let mut accepted_values = vec![fx];
    let fail = |x: &DVector<f64>, fx: f64, iterations: usize, accepted_values: Vec<f64>, n: usize| OptimResult {
        argmax: x.as_slice().to_vec(),
        value: fx,
        grad_norm: f64::INFINITY,
        converged: false,
        n_evals: n,
        iterations,
        accepted_values,
    };
    if !fx.is_finite() {
        return fail(&x, fx, 0, accepted_values, count.get());
    }
    let Ok(grad) = numerical_gradient(&obj, x.as_slice()) else {
        return fail(&x, fx, 0, accepted_values, count.get());
    };
    let mut g = DVector::from_vec(grad);
    let mut hinv = DMatrix::<f64>::identity(p, p);
    let mut fresh = true;
    let mut ls_failures = 0;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        if max_norm(g.as_slice()) <= cfg.gradient_tolerance(fx) {
            return OptimResult {
                argmax: x.as_slice().to_vec(),
                value: fx,
                grad_norm: max_norm(g.as_slice()),
                converged: true,
                n_evals: count.get(),
                iterations,
                accepted_values,
            };
        }
        iterations += 1;

        // Ascent direction on f.
        let mut d = &hinv * &g;
        if g.dot(&d) <= 0.0 {
            hinv = DMatrix::identity(p, p);
            fresh = true;
            d = g.clone();
        }
        if fresh {
            let norm = d.norm();
            if norm > 1.0 {
                d /= norm;
            }
        }
        let slope = g.dot(&d);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + &d * t;
            let ft = obj(trial.as_slice());
            if ft.is_finite() && ft >= fx + ARMIJO_C1 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            ls_failures += 1;
            if ls_failures >= MAX_LINE_SEARCH_FAILURES {
                return nelder_mead_fallback(&obj, x, fx, cfg, iterations, accepted_values, &count);
            }
            hinv = DMatrix::identity(p, p);
            fresh = true;
            continue;
        };

        let Ok(grad) = numerical_gradient(&obj, x_new.as_slice()) else {
            accepted_values.push(f_new);
            return fail(&x_new, f_new, iterations, accepted_values, count.get());
        };
        let g_new = DVector::from_vec(grad);
        let s = &x_new - &x;
        // Curvature pair for the minimization of -f.
        let yv = &g - &g_new;
        let sy = s.dot(&yv);
        let step_small = max_norm(s.as_slice()) <= cfg.xtol * (1.0 + max_norm(x.as_slice()));
        x = x_new;
        fx = f_new;
        g = g_new;
        accepted_values.push(fx);

        if sy > 1e-12 * s.norm() * yv.norm() {
            if fresh {
                hinv = DMatrix::identity(p, p) * (sy / yv.dot(&yv));
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }

        if step_small {
            let gn = max_norm(g.as_slice());
            return OptimResult {
                argmax: x.as_slice().to_vec(),
                value: fx,
                grad_norm: gn,
                converged: gn <= cfg.gradient_tolerance(fx),
                n_evals: count.get(),
                iterations,
                accepted_values,
            };
        }
    }
    let gn = max_norm(g.as_slice());
    OptimResult {
        argmax: x.as_slice().to_vec(),
        value: fx,
        grad_norm: gn,
        converged: gn <= cfg.gradient_tolerance(fx),
        n_evals: count.get(),
        iterations,
        accepted_values,
    }
}

fn nelder_mead_fallback<F>(
    obj: &F,
    x0: DVector<f64>,
    f0: f64,
    cfg: &OptimConfig,
    iterations: usize,
    mut accepted_values: Vec<f64>,
    count: &Cell<usize>,
) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    let (x, fx, used) = nelder_mead(obj, x0.as_slice(), f0, cfg.max_iter * x0.len().max(1), cfg.xtol);
    if fx > f0 {
        accepted_values.push(fx);
    }
    let grad_norm = numerical_gradient(obj, &x)
        .map(|g| max_norm(&g))
        .unwrap_or(f64::INFINITY);
    OptimResult {
        converged: grad_norm <= cfg.gradient_tolerance(fx),
        argmax: x,
        value: fx,
        grad_norm,
        n_evals: count.get(),
        iterations: iterations + used,
        accepted_values,
    }
}

/// Nelder–Mead maximization. Returns the best vertex, its value and the iteration count.
fn nelder_mead<F>(obj: &F, x0: &[f64], f0: f64, max_iter: usize, xtol: f64) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> f64,
{
    let p = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..p {
        let mut v = x0.to_vec();
        v[i] += 0.05 * (1.0 + x0[i].abs());
        let fv = obj(&v);
        simplex.push((v, fv));
    }
    let by_value_desc = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| b.1.total_cmp(&a.1);
    let mut used = 0;
    while used < max_iter {
        simplex.sort_by(by_value_desc);
        let best = &simplex[0].0;
        let spread = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(best).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
            .fold(0.0f64, f64::max);
        if spread <= xtol * (1.0 + max_norm(best)) {
            break;
        }
        used += 1;
        let worst = simplex[p].clone();
        let centroid: Vec<f64> = (0..p)
            .map(|j| simplex[..p].iter().map(|(v, _)| v[j]).sum::<f64>() / p as f64)
            .collect();
        let along = |s: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + s * (c - w)).collect() };
        let xr = along(1.0);
        let fr = obj(&xr);
        if fr > simplex[0].1 {
            let xe = along(2.0);
            let fe = obj(&xe);
            simplex[p] = if fe > fr { (xe, fe) } else { (xr, fr) };
        } else if fr > simplex[p - 1].1 {
            simplex[p] = (xr, fr);
        } else {
            let outside = fr > worst.1;
            let xc = along(if outside { 0.5 } else { -0.5 });
            let fc = obj(&xc);
            let bar = if outside { fr } else { worst.1 };
            if fc >= bar && fc.is_finite() {
                simplex[p] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = vertex.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let fv = obj(&v);
                    *vertex = (v, fv);
                }
            }
        }
    }
    simplex.sort_by(by_value_desc);
    let (x, fx) = simplex.swap_remove(0);
    (x, fx, used)
}
