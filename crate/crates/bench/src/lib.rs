//! Fixtures shared by the criterion benches.

use iterlap::NnlsProblem;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A density-like NNLS problem: `m` grid rows, `j` Gaussian-bump columns.
pub fn bump_problem(m: usize, j: usize, seed: u64) -> NnlsProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..j).map(|_| rng.random_range(-3.0..3.0)).collect();
    let f = DMatrix::from_fn(m, j, |i, k| {
        let x = -4.0 + 8.0 * i as f64 / m as f64;
        (-0.5 * (x - centers[k]).powi(2)).exp()
    });
    let y = DVector::from_fn(m, |i, _| {
        let x = -4.0 + 8.0 * i as f64 / m as f64;
        (-0.5 * x * x / 4.0).exp() + 0.01 * rng.random_range(-1.0..1.0)
    });
    NnlsProblem::new(f, y).expect("finite fixture")
}
