//! Central finite-difference gradients and Hessians.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

/// Relative step `ε^{1/3}` for first differences.
pub fn gradient_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.abs())
}

/// Relative step `ε^{1/4}` for second differences.
pub fn hessian_step(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * (1.0 + x.abs())
}

/// Central-difference gradient with `hᵢ = ε^{1/3}(1 + |xᵢ|)`.
pub fn numerical_gradient<F>(f: &F, x: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let mut xs = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = gradient_step(x[i]);
        xs[i] = x[i] + h;
        let up_x = xs[i];
        let up = f(&xs);
        xs[i] = x[i] - h;
        let down_x = xs[i];
        let down = f(&xs);
        xs[i] = x[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteStencil { coordinate: i });
        }
        g[i] = (up - down) / (up_x - down_x);
    }
    Ok(g)
}

/// Finite-difference Hessian with its negative-definiteness verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianResult {
    /// Symmetric `p × p` matrix of second derivatives.
    pub h: DMatrix<f64>,
    /// True iff `-H` admits a Cholesky factorization with positive pivots.
    pub neg_definite: bool,
    /// `-H⁻¹` when `H` is negative definite.
    pub neg_inv: Option<DMatrix<f64>>,
}

impl HessianResult {
    pub fn from_matrix(h: DMatrix<f64>) -> Self {
        let h = (&h + h.transpose()) * 0.5;
        let neg_inv = if h.iter().all(|v| v.is_finite()) {
            Cholesky::new(-&h)
                .filter(|c| c.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()))
                .map(|c| {
                    let inv = c.inverse();
                    (&inv + inv.transpose()) * 0.5
                })
                .filter(|inv| inv.iter().all(|v| v.is_finite()))
        } else {
            None
        };
        Self {
            neg_definite: neg_inv.is_some(),
            h,
            neg_inv,
        }
    }
}

/// Central second differences with `hᵢ = ε^{1/4}(1 + |xᵢ|)`, symmetrized.
pub fn numerical_hessian<F>(f: &F, x: &[f64]) -> Result<HessianResult>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let p = x.len();
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(Error::NonFiniteStencil { coordinate: 0 });
    }
    let h: Vec<f64> = x
        .iter()
        .map(|xi| {
            let step = hessian_step(*xi);
            (xi + step) - xi
        })
        .collect();
    let mut xs = x.to_vec();
    let eval = |xs: &[f64], coordinate: usize| -> Result<f64> {
        let v = f(xs);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteStencil { coordinate })
        }
    };

    let mut hess = DMatrix::zeros(p, p);
    for i in 0..p {
        xs[i] = x[i] + h[i];
        let up = eval(&xs, i)?;
        xs[i] = x[i] - h[i];
        let down = eval(&xs, i)?;
        xs[i] = x[i];
        hess[(i, i)] = ((up - f0) + (down - f0)) / (h[i] * h[i]);
    }
    for i in 0..p {
        for j in (i + 1)..p {
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                xs[i] = x[i] + si * h[i];
                xs[j] = x[j] + sj * h[j];
                let v = eval(&xs, i);
                xs[i] = x[i];
                xs[j] = x[j];
                v
            };
            let pp = corner(1.0, 1.0)?;
            let pm = corner(1.0, -1.0)?;
            let mp = corner(-1.0, 1.0)?;
            let mm = corner(-1.0, -1.0)?;
            let v = ((pp - pm) - (mp - mm)) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(HessianResult::from_matrix(hess))
}
