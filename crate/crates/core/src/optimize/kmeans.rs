//! Lloyd's k-means with seeded k-means++ initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd update.
    pub wcss_history: Vec<f64>,
    /// Set when there were fewer distinct points than requested clusters.
    pub degenerate: bool,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(j, c)| (j, dist_sq(c, x)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    let m = points.len();
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= {m}, got k = {k}")));
    }
    let p = points[0].len();
    if points.iter().any(|x| x.len() != p) {
        return Err(Error::InvalidArgument("points have differing dimensions".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..m)].clone()];
    let mut degenerate = false;
    while centers.len() < k {
        let d2: Vec<f64> = points.iter().map(|x| nearest(&centers, x).1).collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            degenerate = true;
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut chosen = d2.iter().rposition(|d| *d > 0.0).unwrap_or(0);
        for (i, d) in d2.iter().enumerate() {
            if *d > 0.0 && u < *d {
                chosen = i;
                break;
            }
            u -= d;
        }
        centers.push(points[chosen].clone());
    }

    let mut assignment = vec![usize::MAX; m];
    let mut wcss_history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let next: Vec<usize> = points.iter().map(|x| nearest(&centers, x).0).collect();
        let changed = next != assignment;
        assignment = next;
        let mut sums = vec![vec![0.0; p]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (x, &j) in points.iter().zip(&assignment) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (j, c) in centers.iter_mut().enumerate() {
            if counts[j] > 0 {
                for (cv, s) in c.iter_mut().zip(&sums[j]) {
                    *cv = s / counts[j] as f64;
                }
            }
        }
        wcss_history.push(
            points
                .iter()
                .zip(&assignment)
                .map(|(x, &j)| dist_sq(x, &centers[j]))
                .sum(),
        );
        if !changed {
            break;
        }
    }
    Ok(KMeans {
        centers,
        assignment,
        wcss_history,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(points: &[f64]) -> Vec<Vec<f64>> {
        points.iter().map(|v| vec![*v]).collect()
    }

    #[test]
    fn separated_clusters() {
        let r = kmeans(&scalar(&[0.0, 0.1, 10.0, 10.1, 20.0, 20.1]), 3, 1).unwrap();
        let mut c: Vec<f64> = r.centers.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(c[0], 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 10.05, epsilon = 1e-12);
        assert_abs_diff_eq!(c[2], 20.05, epsilon = 1e-12);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, -2.0], vec![5.0, 3.0]];
        let r = kmeans(&pts, 1, 4).unwrap();
        assert_abs_diff_eq!(r.centers[0][0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.centers[0][1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn k_equals_m_returns_points() {
        let pts = scalar(&[3.0, -1.0, 7.5, 2.0]);
        let r = kmeans(&pts, 4, 9).unwrap();
        let mut c: Vec<f64> = r.centers.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![-1.0, 2.0, 3.0, 7.5]);
    }

    #[test]
    fn duplicates_are_flagged() {
        let r = kmeans(&scalar(&[1.0, 1.0, 1.0, 2.0]), 3, 0).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.centers.len(), 2);
        assert!(kmeans(&scalar(&[1.0]), 2, 0).is_err());
    }

    #[test]
    fn wcss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let pts: Vec<Vec<f64>> = (0..60)
                .map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
                .collect();
            let r = kmeans(&pts, 4, seed).unwrap();
            for w in r.wcss_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }
}
