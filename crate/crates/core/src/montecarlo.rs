//! Importance sampling, resampling and independence Metropolis–Hastings with
//! mixture proposals, plus summary metrics against reference moments.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvn::{Mixture, StudentMixture};
use crate::special::log_sum_exp;
use crate::target::TargetDensity;

/// A sampling distribution with a computable normalized density.
pub trait Proposal: Sync {
    fn dim(&self) -> usize;
    /// Draws `n` points, one per row.
    fn draw(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<DMatrix<f64>>;
    /// `log q(x)` of the normalized proposal.
    fn log_q(&self, x: &[f64]) -> f64;
}

fn check_mass(z: f64, empty: bool) -> Result<()> {
    if empty || !(z > 0.0) {
        return Err(Error::InvalidState("proposal has no positive mass".into()));
    }
    Ok(())
}

impl Proposal for Mixture {
    fn dim(&self) -> usize {
        Mixture::dim(self)
    }

    fn draw(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<DMatrix<f64>> {
        check_mass(self.z(), self.is_empty())?;
        self.sample(n, rng)
    }

    fn log_q(&self, x: &[f64]) -> f64 {
        self.logpdf_unchecked(x) - self.z().ln()
    }
}

impl Proposal for StudentMixture {
    fn dim(&self) -> usize {
        StudentMixture::dim(self)
    }

    fn draw(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<DMatrix<f64>> {
        check_mass(self.z(), self.base().is_empty())?;
        self.sample(n, rng)
    }

    fn log_q(&self, x: &[f64]) -> f64 {
        self.logpdf_unchecked(x) - self.z().ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceSample {
    pub draws: DMatrix<f64>,
    /// `log π(x) − log q(x)` per draw.
    pub log_w: Vec<f64>,
    /// Normalized weights; all zero if every `log_w` is `−∞`.
    pub w_norm: Vec<f64>,
}

impl ImportanceSample {
    /// Builds a sample from draws and log-weights, normalizing by log-sum-exp.
    pub fn from_log_weights(draws: DMatrix<f64>, log_w: Vec<f64>) -> Result<Self> {
        if draws.nrows() != log_w.len() {
            return Err(Error::DimensionMismatch {
                expected: draws.nrows(),
                got: log_w.len(),
            });
        }
        if log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidArgument("log weights must be finite or -inf".into()));
        }
        let lse = log_sum_exp(log_w.iter().copied());
        let w_norm = if lse.is_finite() {
            log_w.iter().map(|l| (l - lse).exp()).collect()
        } else {
            vec![0.0; log_w.len()]
        };
        Ok(Self { draws, log_w, w_norm })
    }

    pub fn len(&self) -> usize {
        self.log_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_w.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    /// CSV with columns `x1..xp,log_weight`.
    pub fn to_csv(&self) -> String {
        let p = self.dim();
        let mut header: Vec<String> = (1..=p).map(|k| format!("x{k}")).collect();
        header.push("log_weight".into());
        let mut s = header.join(",");
        s.push('\n');
        for (i, lw) in self.log_w.iter().enumerate() {
            for k in 0..p {
                s.push_str(&format!("{:?},", self.draws[(i, k)]));
            }
            s.push_str(&format!("{lw:?}\n"));
        }
        s
    }
}

/// Draws `n` points from the normalized `proposal` and weights them against `target`.
pub fn importance_sample<P, R>(target: &TargetDensity, proposal: &P, n: usize, rng: &mut R) -> Result<ImportanceSample>
where
    P: Proposal + ?Sized,
    R: Rng,
{
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be >= 1".into()));
    }
    if proposal.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: proposal.dim(),
        });
    }
    let draws = proposal.draw(n, rng)?;
    let p = draws.ncols();
    let log_w: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = (0..p).map(|k| draws[(i, k)]).collect();
            let lq = proposal.log_q(&x);
            let lp = target.eval(&x);
            if lp == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lp - lq
            }
        })
        .collect();
    let log_w = log_w
        .into_iter()
        .map(|v| if v.is_nan() { f64::NEG_INFINITY } else { v })
        .collect();
    ImportanceSample::from_log_weights(draws, log_w)
}

/// `1 / (N Σ w̃ᵢ²)`.
pub fn ness(s: &ImportanceSample) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let sum_sq: f64 = s.w_norm.iter().map(|w| w * w).sum();
    if !(sum_sq > 0.0) {
        return Err(Error::UndefinedDiagnostic("all importance weights are zero".into()));
    }
    Ok((1.0 / (s.len() as f64 * sum_sq)).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZEstimate {
    pub z_hat: f64,
    pub log_z_hat: f64,
}

/// `(1/N) Σ π(xᵢ)/q(xᵢ)` on the physical scale of `π`, computed in the log domain.
pub fn estimate_z(s: &ImportanceSample) -> Result<ZEstimate> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let log_z_hat = log_sum_exp(s.log_w.iter().copied()) - (s.len() as f64).ln();
    Ok(ZEstimate {
        z_hat: log_z_hat.exp(),
        log_z_hat,
    })
}

/// Residual resampling: `⌊m w̃ᵢ⌋` copies of each index, the rest multinomial on the remainders.
pub fn residual_resample_indices<R: Rng + ?Sized>(w_norm: &[f64], m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::InvalidArgument("resample size must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(m);
    let mut remainders = Vec::with_capacity(w_norm.len());
    for (i, w) in w_norm.iter().enumerate() {
        let expected = m as f64 * w;
        let copies = expected.floor();
        out.extend(std::iter::repeat_n(i, copies as usize));
        remainders.push((expected - copies).max(0.0));
    }
    out.truncate(m);
    let left = m - out.len();
    if left > 0 {
        let dist = WeightedIndex::new(&remainders)
            .or_else(|_| WeightedIndex::new(w_norm))
            .map_err(|e| Error::UndefinedDiagnostic(format!("cannot resample: {e}")))?;
        out.extend((0..left).map(|_| dist.sample(rng)));
    }
    Ok(out)
}

pub fn residual_resample<R: Rng + ?Sized>(s: &ImportanceSample, m: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let idx = residual_resample_indices(&s.w_norm, m, rng)?;
    Ok(DMatrix::from_fn(idx.len(), s.dim(), |i, k| s.draws[(idx[i], k)]))
}

/// Weighted mean and population standard deviation per coordinate.
pub fn moments(s: &ImportanceSample) -> Result<(DVector<f64>, DVector<f64>)> {
    let mass: f64 = s.w_norm.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::UndefinedDiagnostic("all importance weights are zero".into()));
    }
    let p = s.dim();
    let mut mean = DVector::zeros(p);
    for (i, w) in s.w_norm.iter().enumerate() {
        for k in 0..p {
            mean[k] += w * s.draws[(i, k)];
        }
    }
    mean /= mass;
    let mut var = DVector::zeros(p);
    for (i, w) in s.w_norm.iter().enumerate() {
        for k in 0..p {
            let d = s.draws[(i, k)] - mean[k];
            var[k] += w * d * d;
        }
    }
    var /= mass;
    Ok((mean, var.map(f64::sqrt)))
}

/// Weighted covariance (population convention).
pub fn weighted_covariance(draws: &DMatrix<f64>, w: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if draws.nrows() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: draws.nrows(),
            got: w.len(),
        });
    }
    let mass: f64 = w.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::UndefinedDiagnostic("weights have no mass".into()));
    }
    let p = draws.ncols();
    let mut mean = DVector::zeros(p);
    for (i, wi) in w.iter().enumerate() {
        mean += draws.row(i).transpose() * (*wi / mass);
    }
    let mut cov = DMatrix::zeros(p, p);
    for (i, wi) in w.iter().enumerate() {
        let d = draws.row(i).transpose() - &mean;
        cov += &d * d.transpose() * (*wi / mass);
    }
    Ok((mean, cov))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDiagnostics {
    pub ness: f64,
    pub z_hat: f64,
    pub log_z_hat: f64,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

pub fn diagnostics(s: &ImportanceSample) -> Result<McDiagnostics> {
    let z = estimate_z(s)?;
    let (mean, sd) = moments(s)?;
    Ok(McDiagnostics {
        ness: ness(s)?,
        z_hat: z.z_hat,
        log_z_hat: z.log_z_hat,
        mean: mean.iter().copied().collect(),
        sd: sd.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhChain {
    /// Chain states, one per row; the initial state is not included.
    pub states: DMatrix<f64>,
    pub acceptance_rate: f64,
}

/// Independence Metropolis–Hastings with acceptance `min(1, π(x')q(x) / (π(x)q(x')))`.
pub fn independence_mh<P, R>(
    target: &TargetDensity,
    proposal: &P,
    n: usize,
    initial: &[f64],
    rng: &mut R,
) -> Result<MhChain>
where
    P: Proposal + ?Sized,
    R: Rng,
{
    if initial.len() != target.dim() || proposal.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: initial.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("chain length must be >= 1".into()));
    }
    let lp0 = target.eval(initial);
    if !lp0.is_finite() {
        return Err(Error::InvalidArgument(
            "target density is zero at the initial state".into(),
        ));
    }
    let p = target.dim();
    let mut current = initial.to_vec();
    let mut current_lw = lp0 - proposal.log_q(initial);
    let candidates = proposal.draw(n, rng)?;
    let mut states = DMatrix::zeros(n, p);
    let mut accepted = 0usize;
    let mut x = vec![0.0; p];
    for i in 0..n {
        for k in 0..p {
            x[k] = candidates[(i, k)];
        }
        let lw = target.eval(&x) - proposal.log_q(&x);
        let log_ratio = lw - current_lw;
        let u: f64 = rng.random();
        if log_ratio >= 0.0 || u.ln() < log_ratio {
            current.copy_from_slice(&x);
            current_lw = lw;
            accepted += 1;
        }
        states.row_mut(i).copy_from_slice(&current);
    }
    Ok(MhChain {
        states,
        acceptance_rate: accepted as f64 / n as f64,
    })
}

/// Probability levels 0.05, 0.10, …, 0.95.
pub fn quantile_levels() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// First two eigenvectors (largest eigenvalues first) of the correlation matrix of `cov`.
pub fn leading_correlation_eigenvectors(cov: &DMatrix<f64>) -> Result<[DVector<f64>; 2]> {
    let p = cov.nrows();
    if p < 2 || cov.ncols() != p {
        return Err(Error::InvalidArgument(
            "need a square covariance of dimension >= 2".into(),
        ));
    }
    let sd: Vec<f64> = (0..p).map(|i| cov[(i, i)].sqrt()).collect();
    if sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::NotPositiveDefinite(
            "reference covariance has non-positive variances".into(),
        ));
    }
    let corr = DMatrix::from_fn(p, p, |i, j| cov[(i, j)] / (sd[i] * sd[j]));
    let eig = corr.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let pick = |k: usize| {
        let v = eig.eigenvectors.column(order[k]).into_owned();
        // Fix the sign so the largest-magnitude entry is positive.
        let imax = v.iamax();
        if v[imax] < 0.0 {
            -v
        } else {
            v
        }
    };
    Ok([pick(0), pick(1)])
}

/// Quantiles of the standardized draws `(x − m)/sd` projected on the leading
/// correlation eigenvectors of the reference covariance.
pub fn projected_quantiles(
    draws: &DMatrix<f64>,
    ref_mean: &DVector<f64>,
    ref_cov: &DMatrix<f64>,
) -> Result<[Vec<f64>; 2]> {
    let p = ref_cov.nrows();
    if draws.ncols() != p || ref_mean.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: draws.ncols(),
        });
    }
    if draws.nrows() == 0 {
        return Err(Error::InvalidArgument("no draws".into()));
    }
    let vecs = leading_correlation_eigenvectors(ref_cov)?;
    let sd: Vec<f64> = (0..p).map(|i| ref_cov[(i, i)].sqrt()).collect();
    let levels = quantile_levels();
    let project = |e: &DVector<f64>| -> Vec<f64> {
        let mut proj: Vec<f64> = (0..draws.nrows())
            .map(|i| (0..p).map(|k| e[k] * (draws[(i, k)] - ref_mean[k]) / sd[k]).sum())
            .collect();
        proj.sort_by(f64::total_cmp);
        levels.iter().map(|q| quantile(&proj, *q)).collect()
    };
    Ok([project(&vecs[0]), project(&vecs[1])])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMetrics {
    pub mahalanobis: f64,
    pub spectral: f64,
    pub q_err: [f64; 2],
}

/// Mahalanobis distance of the means under the reference covariance, spectral
/// norm of the covariance difference and mean absolute quantile error along the
/// two leading reference correlation eigenvectors.
pub fn comparison_metrics(
    sample_mean: &DVector<f64>,
    sample_cov: &DMatrix<f64>,
    sample_draws: &DMatrix<f64>,
    ref_mean: &DVector<f64>,
    ref_cov: &DMatrix<f64>,
    ref_quantiles: &[Vec<f64>; 2],
) -> Result<ComparisonMetrics> {
    let p = ref_mean.len();
    if sample_mean.len() != p || sample_cov.nrows() != p || ref_cov.nrows() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: sample_mean.len(),
        });
    }
    let chol =
        Cholesky::new(ref_cov.clone()).ok_or_else(|| Error::NotPositiveDefinite("reference covariance".into()))?;
    let d = sample_mean - ref_mean;
    let mahalanobis = d.dot(&chol.solve(&d)).max(0.0).sqrt();
    let spectral = (sample_cov - ref_cov).singular_values().max();
    let q = projected_quantiles(sample_draws, ref_mean, ref_cov)?;
    let mut q_err = [0.0; 2];
    for j in 0..2 {
        if ref_quantiles[j].len() != 19 {
            return Err(Error::DimensionMismatch {
                expected: 19,
                got: ref_quantiles[j].len(),
            });
        }
        q_err[j] = q[j]
            .iter()
            .zip(&ref_quantiles[j])
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 19.0;
    }
    Ok(ComparisonMetrics {
        mahalanobis,
        spectral,
        q_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvn::GaussComponent;
    use crate::target::{gaussian_kernel, standard_normal_kernel, trimodal_mixture};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn sample_with_weights(w: &[f64]) -> ImportanceSample {
        let draws = DMatrix::from_fn(w.len(), 1, |i, _| i as f64);
        let log_w = w.iter().map(|v| v.ln()).collect();
        ImportanceSample::from_log_weights(draws, log_w).unwrap()
    }

    #[test]
    fn exact_proposal_gives_unit_ness() {
        let t = standard_normal_kernel(2);
        let q = Mixture::single(GaussComponent::standard(2), 1.0).unwrap();
        let s = importance_sample(&t, &q, 500, &mut rng(1)).unwrap();
        for w in &s.w_norm {
            assert_abs_diff_eq!(*w, 1.0 / 500.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(ness(&s).unwrap(), 1.0, epsilon = 1e-12);
        let z = estimate_z(&s).unwrap();
        assert_abs_diff_eq!(z.z_hat, 2.0 * std::f64::consts::PI, epsilon = 1e-10);
    }

    #[test]
    fn ness_hand_values() {
        assert_abs_diff_eq!(ness(&sample_with_weights(&[1.0; 7])).unwrap(), 1.0, epsilon = 1e-15);
        let mut w = vec![0.0; 100];
        w[17] = 3.0;
        assert_abs_diff_eq!(ness(&sample_with_weights(&w)).unwrap(), 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(
            ness(&sample_with_weights(&[1.0, 1.0, 2.0])).unwrap(),
            8.0 / 9.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            ness(&sample_with_weights(&[0.0, 0.0])),
            Err(Error::UndefinedDiagnostic(_))
        ));
    }

    #[test]
    fn z_of_scaled_target() {
        let c = 3.7f64;
        let t = TargetDensity::new("scaled", 1, move |x: &[f64]| {
            c.ln() + crate::special::normal_pdf(x[0]).ln()
        });
        let q = Mixture::single(GaussComponent::standard(1), 2.0).unwrap();
        let s = importance_sample(&t, &q, 100, &mut rng(3)).unwrap();
        let z = estimate_z(&s).unwrap();
        assert_abs_diff_eq!(z.z_hat, c, epsilon = 1e-12);
    }

    #[test]
    fn empty_proposal_is_rejected() {
        let t = standard_normal_kernel(1);
        let q = Mixture::single(GaussComponent::standard(1), 0.0).unwrap();
        assert!(matches!(
            importance_sample(&t, &q, 10, &mut rng(0)),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn residual_resampling_examples() {
        let count = |w: &[f64], m: usize| {
            let idx = residual_resample_indices(w, m, &mut rng(5)).unwrap();
            let mut c = vec![0; w.len()];
            for i in idx {
                c[i] += 1;
            }
            c
        };
        assert_eq!(count(&[0.5, 0.5], 4), vec![2, 2]);
        assert_eq!(count(&[0.75, 0.25], 4), vec![3, 1]);
        assert_eq!(count(&[0.6, 0.4], 5), vec![3, 2]);
        let c = count(&[0.3, 0.3, 0.4], 7);
        assert_eq!(c.iter().sum::<usize>(), 7);
        assert!(c[0] >= 2 && c[1] >= 2 && c[2] >= 2);
    }

    #[test]
    fn residual_resampling_preserves_expectation() {
        let w = [0.05, 0.13, 0.22, 0.31, 0.29];
        let h = [1.0, -2.0, 0.5, 4.0, -1.0];
        let target: f64 = w.iter().zip(&h).map(|(a, b)| a * b).sum();
        let mut r = rng(7);
        let reps = 10_000;
        let m = 7;
        let means: Vec<f64> = (0..reps)
            .map(|_| {
                let idx = residual_resample_indices(&w, m, &mut r).unwrap();
                idx.iter().map(|&i| h[i]).sum::<f64>() / m as f64
            })
            .collect();
        let avg = means.iter().sum::<f64>() / reps as f64;
        let var = means.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!((avg - target).abs() < 3.0 * se, "{avg} vs {target} (se {se})");
    }

    #[test]
    fn moments_examples() {
        let s =
            ImportanceSample::from_log_weights(DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]), vec![0.0, 0.0]).unwrap();
        let (m, sd) = moments(&s).unwrap();
        assert_abs_diff_eq!(m[0], 0.0);
        assert_abs_diff_eq!(sd[0], 1.0);
        let one = ImportanceSample::from_log_weights(DMatrix::from_row_slice(1, 2, &[3.0, 4.0]), vec![0.0]).unwrap();
        let (m, sd) = moments(&one).unwrap();
        assert_eq!(m.as_slice(), &[3.0, 4.0]);
        assert_eq!(sd.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn f2_mean_from_exact_proposal() {
        let mix = trimodal_mixture();
        let t = TargetDensity::new("f2", 2, {
            let m = mix.clone();
            move |x: &[f64]| m.logpdf_unchecked(x)
        });
        let s = importance_sample(&t, &mix, 100_000, &mut rng(11)).unwrap();
        let (m, _) = moments(&s).unwrap();
        // Mixture mean: 0.33·(−3) + 0.33·2 = −0.33 per coordinate.
        let exact = mix.mean().unwrap();
        assert_abs_diff_eq!(exact[0], -0.33, epsilon = 1e-12);
        assert!((m[0] + 0.33).abs() < 0.03 && (m[1] + 0.33).abs() < 0.03, "{m}");
    }

    #[test]
    fn mh_with_exact_proposal_always_accepts() {
        let t = gaussian_kernel(&[1.0, 2.0], &[1.0, 0.5, 0.5, 2.0]).unwrap();
        let q = Mixture::single(
            GaussComponent::from_slices(&[1.0, 2.0], &[1.0, 0.5, 0.5, 2.0]).unwrap(),
            1.0,
        )
        .unwrap();
        let chain = independence_mh(&t, &q, 2000, &[0.0, 0.0], &mut rng(2)).unwrap();
        assert_eq!(chain.acceptance_rate, 1.0);
    }

    #[test]
    fn mh_with_shifted_proposal_rarely_accepts() {
        let t = standard_normal_kernel(1);
        let q = Mixture::single(GaussComponent::from_slices(&[20.0], &[1.0]).unwrap(), 1.0).unwrap();
        let chain = independence_mh(&t, &q, 2000, &[0.0], &mut rng(4)).unwrap();
        assert!(chain.acceptance_rate < 0.5);
        assert!(independence_mh(
            &TargetDensity::new("zero", 1, |_: &[f64]| f64::NEG_INFINITY),
            &q,
            10,
            &[0.0],
            &mut rng(4)
        )
        .is_err());
    }

    #[test]
    fn mh_chain_mean_for_gaussian() {
        let t = standard_normal_kernel(1);
        let q = Mixture::single(GaussComponent::standard(1), 1.0).unwrap();
        let n = 20_000;
        let chain = independence_mh(&t, &q, n, &[0.5], &mut rng(6)).unwrap();
        let mean = chain.states.column(0).mean();
        assert!(mean.abs() < 5.0 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn student_proposal_covers_gaussian_underflow() {
        let base = Mixture::single(GaussComponent::standard(1), 1.0).unwrap();
        let tq = base.to_student(10.0).unwrap();
        let t = TargetDensity::new("cauchy", 1, |x: &[f64]| -(x[0] * x[0]).ln_1p());
        for x in [0.0, 3.0, 15.0, 40.0] {
            let g = t.eval(&[x]) - base.log_q(&[x]);
            let s = t.eval(&[x]) - tq.log_q(&[x]);
            assert!(s.is_finite());
            if g.is_finite() {
                assert!(s.is_finite());
            }
        }
        assert!(!(base.log_q(&[40.0]) - base.log_q(&[0.0])).exp().is_normal());
        assert!(tq.log_q(&[40.0]).exp() > 0.0);
    }

    #[test]
    fn metrics_examples() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let mean = DVector::from_vec(vec![1.0, -1.0]);
        let draws = DMatrix::from_fn(500, 2, |i, k| ((i * 7 + k * 13) % 41) as f64 / 10.0);
        let qs = projected_quantiles(&draws, &mean, &cov).unwrap();
        let m = comparison_metrics(&mean, &cov, &draws, &mean, &cov, &qs).unwrap();
        assert_eq!(m.mahalanobis, 0.0);
        assert_abs_diff_eq!(m.spectral, 0.0, epsilon = 1e-15);
        assert_eq!(m.q_err, [0.0, 0.0]);

        // Shift by one standard deviation along an eigenvector of the covariance.
        let eig = cov.clone().symmetric_eigen();
        let v = eig.eigenvectors.column(0).into_owned();
        let shifted = &mean + &v * eig.eigenvalues[0].sqrt();
        let m = comparison_metrics(&shifted, &cov, &draws, &mean, &cov, &qs).unwrap();
        assert_abs_diff_eq!(m.mahalanobis, 1.0, epsilon = 1e-12);

        let bumped = &cov + DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.3]));
        let m = comparison_metrics(&mean, &bumped, &draws, &mean, &cov, &qs).unwrap();
        assert_abs_diff_eq!(m.spectral, 0.3, epsilon = 1e-12);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(comparison_metrics(&mean, &cov, &draws, &mean, &singular, &qs).is_err());
    }

    #[test]
    fn csv_dump_layout() {
        let s =
            ImportanceSample::from_log_weights(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.5]), vec![0.0, -1.5])
                .unwrap();
        assert_eq!(s.to_csv(), "x1,x2,log_weight\n1.0,2.0,0.0\n3.0,4.5,-1.5\n");
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.1), 1.4);
        assert_eq!(quantile_levels().len(), 19);
    }

    proptest! {
        #[test]
        fn ness_in_unit_interval_and_one_iff_equal(w in prop::collection::vec(0.0f64..5.0, 1..40)) {
            prop_assume!(w.iter().any(|v| *v > 0.0));
            let s = sample_with_weights(&w);
            let v = ness(&s).unwrap();
            prop_assert!(v > 0.0 && v <= 1.0);
            let max = w.iter().copied().fold(0.0, f64::max);
            let min = w.iter().copied().fold(f64::INFINITY, f64::min);
            if max == min {
                prop_assert!((v - 1.0).abs() < 1e-12);
            } else if max > min * (1.0 + 1e-6) {
                prop_assert!(v < 1.0);
            }
        }

        #[test]
        fn z_estimate_scales_with_target(c in 1e-3f64..1e3, seed in any::<u64>()) {
            let q = Mixture::single(GaussComponent::standard(1), 1.0).unwrap();
            let t1 = TargetDensity::new("a", 1, |x: &[f64]| -0.5 * x[0] * x[0] - 0.1 * x[0].powi(4));
            let lc = c.ln();
            let t2 = TargetDensity::new("b", 1, move |x: &[f64]| lc - 0.5 * x[0] * x[0] - 0.1 * x[0].powi(4));
            let a = importance_sample(&t1, &q, 200, &mut rng(seed)).unwrap();
            let b = importance_sample(&t2, &q, 200, &mut rng(seed)).unwrap();
            let za = estimate_z(&a).unwrap().log_z_hat;
            let zb = estimate_z(&b).unwrap().log_z_hat;
            prop_assert!((zb - za - lc).abs() < 1e-12);
        }
    }
}
