//! Multivariate normal and Student-t components and their weighted mixtures.
//!
//! A [`Mixture`] holds unnormalized non-negative weights; its total mass `Z = Σ wⱼ`
//! is the normalization constant of `Σ wⱼ φ(x; μⱼ, Σⱼ)`. Zero-weight components
//! stay in the mixture so that component indices remain stable, but they are
//! skipped when sampling and when evaluating the density.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::special::{ln_gamma, log_sum_exp, LN_2PI};

/// A multivariate normal component `N(μ, Σ)` with a cached Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussComponent {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl GaussComponent {
    /// Builds a component. The covariance is symmetrized before factoring.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if p == 0 {
            return Err(Error::InvalidArgument("component dimension must be positive".into()));
        }
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("component has non-finite entries".into()));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("component covariance".into()))?
            .l();
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::NotPositiveDefinite("degenerate component covariance".into()));
        }
        Ok(Self {
            mean,
            cov,
            chol,
            log_det,
        })
    }

    pub fn from_slices(mean: &[f64], cov: &[f64]) -> Result<Self> {
        let p = mean.len();
        if cov.len() != p * p {
            return Err(Error::DimensionMismatch {
                expected: p * p,
                got: cov.len(),
            });
        }
        Self::new(DVector::from_row_slice(mean), DMatrix::from_row_slice(p, p, cov))
    }

    pub fn standard(p: usize) -> Self {
        Self::new(DVector::zeros(p), DMatrix::identity(p, p)).expect("identity is PD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower-triangular `L` with `L Lᵀ = Σ`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Squared Mahalanobis distance `(x-μ)ᵀ Σ⁻¹ (x-μ)` by forward substitution.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let p = self.dim();
        debug_assert_eq!(x.len(), p);
        let mut z = [0.0_f64; 32];
        let mut heap;
        let z: &mut [f64] = if p <= 32 {
            &mut z[..p]
        } else {
            heap = vec![0.0; p];
            &mut heap
        };
        let mut q = 0.0;
        for i in 0..p {
            let mut s = x[i] - self.mean[i];
            for k in 0..i {
                s -= self.chol[(i, k)] * z[k];
            }
            z[i] = s / self.chol[(i, i)];
            q += z[i] * z[i];
        }
        q
    }

    /// Normal log density, `-p/2 log 2π - 1/2 log|Σ| - 1/2 (x-μ)ᵀΣ⁻¹(x-μ)`.
    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.logpdf_unchecked(x))
    }

    pub(crate) fn logpdf_unchecked(&self, x: &[f64]) -> f64 {
        let p = self.dim() as f64;
        -0.5 * (p * LN_2PI + self.log_det + self.mahalanobis_sq(x))
    }

    /// Multivariate t log density with this component's location and scale matrix.
    pub fn t_logpdf(&self, x: &[f64], df: f64) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.t_logpdf_unchecked(x, df))
    }

    pub(crate) fn t_logpdf_unchecked(&self, x: &[f64], df: f64) -> f64 {
        let p = self.dim() as f64;
        let q = self.mahalanobis_sq(x);
        ln_gamma(0.5 * (df + p))
            - ln_gamma(0.5 * df)
            - 0.5 * p * (df * std::f64::consts::PI).ln()
            - 0.5 * self.log_det
            - 0.5 * (df + p) * (q / df).ln_1p()
    }

    /// Writes `μ + L z` with `z ~ N(0, I)` into `out`, scaling `L z` by `scale`.
    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64, out: &mut [f64]) {
        let p = self.dim();
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..p {
            let mut s = 0.0;
            for k in 0..=i {
                s += self.chol[(i, k)] * z[k];
            }
            out[i] = self.mean[i] + scale * s;
        }
    }
}

/// Normalizing mass of the Laplace approximation, `(2π)^{p/2} |Σ|^{1/2} π(μ)`.
pub fn laplace_weight(c: &GaussComponent, pi_at_mode: f64) -> f64 {
    laplace_log_weight(c, pi_at_mode.ln()).exp()
}

/// Log of [`laplace_weight`] given `log π(μ)`.
pub fn laplace_log_weight(c: &GaussComponent, log_pi_at_mode: f64) -> f64 {
    0.5 * c.dim() as f64 * LN_2PI + 0.5 * c.log_det() + log_pi_at_mode
}

/// `Σ wⱼ φ(x; μⱼ, Σⱼ)` with non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    weights: Vec<f64>,
    components: Vec<GaussComponent>,
}

impl Mixture {
    pub fn new(weights: Vec<f64>, components: Vec<GaussComponent>) -> Result<Self> {
        if weights.len() != components.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be finite and >= 0".into()));
        }
        if let Some(first) = components.first() {
            let p = first.dim();
            for c in &components {
                check_dim(p, c.dim())?;
            }
        }
        Ok(Self { weights, components })
    }

    pub fn single(component: GaussComponent, weight: f64) -> Result<Self> {
        Self::new(vec![weight], vec![component])
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, GaussComponent::dim)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussComponent] {
        &self.components
    }

    /// Total mass `Z = Σ wⱼ`, recomputed on every call.
    pub fn z(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.components.len() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "weights must be finite, >= 0 and one per component".into(),
            ));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn scale_weights(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
    }

    pub fn push(&mut self, weight: f64, component: GaussComponent) -> Result<()> {
        if !self.is_empty() {
            check_dim(self.dim(), component.dim())?;
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidArgument("weight must be finite and >= 0".into()));
        }
        self.weights.push(weight);
        self.components.push(component);
        Ok(())
    }

    /// `log Σ wⱼ φ(x; μⱼ, Σⱼ)`; `-∞` when every term underflows.
    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::InvalidState("empty mixture".into()));
        }
        check_dim(self.dim(), x.len())?;
        Ok(self.logpdf_unchecked(x))
    }

    pub(crate) fn logpdf_unchecked(&self, x: &[f64]) -> f64 {
        log_sum_exp(
            self.weights
                .iter()
                .zip(&self.components)
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, c)| w.ln() + c.logpdf_unchecked(x)),
        )
    }

    /// `Σ wⱼ φ(x; μⱼ, Σⱼ)` on the natural scale.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, c)| w * c.logpdf_unchecked(x).exp())
            .sum()
    }

    /// Draws `n` points from the normalized mixture, one per row.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let picker = ComponentPicker::new(&self.weights)?;
        let p = self.dim();
        let mut out = DMatrix::zeros(n, p);
        let mut row = vec![0.0; p];
        for i in 0..n {
            let j = picker.pick(rng);
            self.components[j].draw_into(rng, 1.0, &mut row);
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }

    /// Mean of the normalized mixture, `Σ πⱼ μⱼ`.
    pub fn mean(&self) -> Result<DVector<f64>> {
        let z = self.nonzero_z()?;
        let mut m = DVector::zeros(self.dim());
        for (w, c) in self.weights.iter().zip(&self.components) {
            m += c.mean() * (w / z);
        }
        Ok(m)
    }

    /// Covariance of the normalized mixture, `Σ πⱼ (Σⱼ + μⱼμⱼᵀ) - m mᵀ`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let z = self.nonzero_z()?;
        let m = self.mean()?;
        let p = self.dim();
        let mut s = DMatrix::zeros(p, p);
        for (w, c) in self.weights.iter().zip(&self.components) {
            let d = c.mean() - &m;
            s += (c.cov() + &d * d.transpose()) * (w / z);
        }
        Ok(s)
    }

    fn nonzero_z(&self) -> Result<f64> {
        let z = self.z();
        if self.is_empty() || z <= 0.0 {
            return Err(Error::InvalidState("mixture has no positive mass".into()));
        }
        Ok(z)
    }

    pub fn to_student(&self, df: f64) -> Result<StudentMixture> {
        StudentMixture::new(self.clone(), df)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Componentwise multivariate t mixture sharing locations, scale matrices and weights
/// with a Gaussian [`Mixture`].
#[derive(Debug, Clone, PartialEq)]
pub struct StudentMixture {
    base: Mixture,
    df: f64,
}

impl StudentMixture {
    pub fn new(base: Mixture, df: f64) -> Result<Self> {
        if !(df > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "degrees of freedom must be > 0, got {df}"
            )));
        }
        Ok(Self { base, df })
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn base(&self) -> &Mixture {
        &self.base
    }

    pub fn z(&self) -> f64 {
        self.base.z()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        if self.base.is_empty() {
            return Err(Error::InvalidState("empty mixture".into()));
        }
        check_dim(self.dim(), x.len())?;
        Ok(self.logpdf_unchecked(x))
    }

    pub(crate) fn logpdf_unchecked(&self, x: &[f64]) -> f64 {
        log_sum_exp(
            self.base
                .weights
                .iter()
                .zip(&self.base.components)
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, c)| w.ln() + c.t_logpdf_unchecked(x, self.df)),
        )
    }

    /// Normal draw divided by `sqrt(χ²_df / df)`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let picker = ComponentPicker::new(&self.base.weights)?;
        let chi = ChiSquared::new(self.df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let p = self.dim();
        let mut out = DMatrix::zeros(n, p);
        let mut row = vec![0.0; p];
        for i in 0..n {
            let j = picker.pick(rng);
            let scale = 1.0 / (chi.sample(rng) / self.df).sqrt();
            self.base.components[j].draw_into(rng, scale, &mut row);
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }
}

/// Inverse-CDF component selection over the positive weights.
struct ComponentPicker {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl ComponentPicker {
    fn new(weights: &[f64]) -> Result<Self> {
        let z: f64 = weights.iter().sum();
        if weights.is_empty() || !(z > 0.0) {
            return Err(Error::InvalidState(
                "cannot sample from a mixture with zero mass".into(),
            ));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / z;
                acc
            })
            .collect();
        let last_positive = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
        Ok(Self {
            cumulative,
            last_positive,
        })
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|c| u < *c)
            .unwrap_or(self.last_positive)
    }
}

#[derive(Serialize, Deserialize)]
struct ComponentRecord {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MixtureRecord {
    dim: usize,
    weights: Vec<f64>,
    components: Vec<ComponentRecord>,
    #[serde(rename = "Z")]
    z: f64,
}

impl Serialize for Mixture {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let record = MixtureRecord {
            dim: self.dim(),
            weights: self.weights.clone(),
            components: self
                .components
                .iter()
                .map(|c| ComponentRecord {
                    mean: c.mean().iter().copied().collect(),
                    cov: c.cov().row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect(),
            z: self.z(),
        };
        record.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mixture {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let record = MixtureRecord::deserialize(d)?;
        let components = record
            .components
            .into_iter()
            .map(|c| {
                if c.mean.len() != record.dim || c.cov.len() != record.dim {
                    return Err(D::Error::custom("component dimension does not match `dim`"));
                }
                let flat: Vec<f64> = c.cov.into_iter().flatten().collect();
                GaussComponent::from_slices(&c.mean, &flat).map_err(D::Error::custom)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Mixture::new(record.weights, components).map_err(D::Error::custom)
    }
}
