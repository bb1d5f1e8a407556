//! PSD linear algebra, Gaussian sampling, ℓᵖ norms and the Gaussian
//! inequalities used by the coupling bounds.

mod pnorm;
mod psd;

pub use pnorm::{lp_norm, phi_p, PNorm};
pub use psd::{relative_frobenius, symmetric_spectral_norm, PsdMatrix, CLAMP_TOL, SYMMETRY_TOL};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Centered Gaussian law `N(0, cov)`.
#[derive(Debug, Clone)]
pub struct GaussianLaw {
    cov: PsdMatrix,
}

impl GaussianLaw {
    pub fn new(cov: PsdMatrix) -> Self {
        Self { cov }
    }

    pub fn standard(d: usize) -> Self {
        Self::new(PsdMatrix::identity(d))
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    pub fn cov(&self) -> &PsdMatrix {
        &self.cov
    }

    pub fn mean(&self) -> DVector<f64> {
        DVector::zeros(self.dim())
    }

    /// One draw `cov^{1/2} Z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(self.dim(), rng);
        self.cov.sqrt_matrix() * z
    }

    /// `count` draws as the rows of a matrix.
    pub fn sample_rows<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let d = self.dim();
        let z = DMatrix::from_fn(count, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        z * self.cov.sqrt_matrix()
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Unique PSD square root of `m`.
pub fn psd_sqrt(m: &PsdMatrix) -> PsdMatrix {
    m.sqrt()
}

/// `φ_p(d) · max_j √Σ_jj`, an upper bound on `E‖X‖_p` for `X ~ N(0, Σ)`.
pub fn gaussian_pnorm_mean_bound(cov: &PsdMatrix, p: PNorm) -> f64 {
    phi_p(p, cov.dim()) * cov.max_diagonal().max(0.0).sqrt()
}

/// Upper bound on `E[‖X‖₂^k ‖X‖_∞]` for `X ~ N(0, Σ)`, `k ∈ {2, 3}`:
/// `4σ√(log 2d) Σσ_j²` and `8σ√(log 2d) (Σσ_j²)^{3/2}` with σ² = max σ_j².
pub fn gaussian_norm_product_bound(cov: &PsdMatrix, k: u32) -> Result<f64> {
    let diag = cov.matrix().diagonal();
    let sigma = diag.max().max(0.0).sqrt();
    let trace: f64 = diag.iter().sum();
    let log_term = (2.0 * cov.dim() as f64).ln().sqrt();
    match k {
        2 => Ok(4.0 * sigma * log_term * trace),
        3 => Ok(8.0 * sigma * log_term * trace.powf(1.5)),
        _ => Err(Error::invalid("k", format!("moment order must be 2 or 3, got {k}"))),
    }
}

/// `2d · exp(−t² / (2 d^{2/p} s²))` with `s = ‖Σ₁^{1/2} − Σ₂^{1/2}‖₂`,
/// unclamped. Zero when `s = 0`.
pub fn gaussian_gaussian_tail_from_norm(d: usize, p: PNorm, sqrt_diff_norm: f64, t: f64) -> f64 {
    if sqrt_diff_norm == 0.0 {
        return 0.0;
    }
    let scale = p.dim_root(d).powi(2);
    2.0 * d as f64 * (-t * t / (2.0 * scale * sqrt_diff_norm * sqrt_diff_norm)).exp()
}

/// `‖Σ₁^{1/2} − Σ₂^{1/2}‖₂`.
pub fn sqrt_difference_norm(s1: &PsdMatrix, s2: &PsdMatrix) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return Err(Error::invalid("s2", "dimension mismatch"));
    }
    Ok(symmetric_spectral_norm(&(s1.sqrt_matrix() - s2.sqrt_matrix())))
}

/// Bound on `P(‖(Σ₁^{1/2} − Σ₂^{1/2})Z‖_p > t)`, clamped to `[0, 1]`.
pub fn gaussian_gaussian_tail_bound(
    s1: &PsdMatrix,
    s2: &PsdMatrix,
    p: PNorm,
    t: f64,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid("t", format!("need t > 0, got {t}")));
    }
    let s = sqrt_difference_norm(s1, s2)?;
    Ok(gaussian_gaussian_tail_from_norm(s1.dim(), p, s, t).min(1.0))
}

/// `‖(Σ + ν²I)^{1/2} − Σ^{1/2}‖₂`, which never exceeds ν.
pub fn sqrt_perturbation_check(sigma: &PsdMatrix, nu: f64) -> Result<f64> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::invalid("nu", format!("need nu > 0, got {nu}")));
    }
    let shifted = sigma.shifted(nu * nu);
    Ok(symmetric_spectral_norm(
        &(shifted.sqrt_matrix() - sigma.sqrt_matrix()),
    ))
}

/// Induced operator norm `sup ‖Ax‖_p / ‖x‖_p`.
///
/// Exact for p ∈ {1, 2, ∞}. Other p return the Riesz–Thorin bound
/// `‖A‖₁^{1/p} ‖A‖_∞^{1−1/p}`, which dominates the true norm.
pub fn operator_norm(a: &DMatrix<f64>, p: PNorm) -> f64 {
    let col_sum = a
        .column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let row_sum = a
        .row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    match p {
        PNorm::Infinity => row_sum,
        PNorm::Finite(q) if q == 1.0 => col_sum,
        PNorm::Finite(q) if q == 2.0 => a.clone().singular_values().max(),
        PNorm::Finite(q) => col_sum.powf(1.0 / q) * row_sum.powf(1.0 - 1.0 / q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{tag, Streams};
    use std::f64::consts::PI;

    fn random_psd(d: usize, rng: &mut impl Rng) -> PsdMatrix {
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        PsdMatrix::new(&a * a.transpose()).unwrap()
    }

    #[test]
    fn pnorm_mean_bound_examples() {
        let b = gaussian_pnorm_mean_bound(&PsdMatrix::identity(1), PNorm::INF);
        assert!((b - (2.0 * 2f64.ln()).sqrt()).abs() < 1e-14);
        assert!((2.0 / PI).sqrt() <= b);
        let b = gaussian_pnorm_mean_bound(&PsdMatrix::identity(10), PNorm::INF);
        assert!((b - (2.0 * 20f64.ln()).sqrt()).abs() < 1e-14);
        let b = gaussian_pnorm_mean_bound(&PsdMatrix::diagonal(&[4.0, 1.0]), PNorm::TWO);
        assert!((b - 4.0).abs() < 1e-14);
    }

    #[test]
    fn gaussian_gaussian_examples() {
        let mut rng = Streams::new(1, tag::GAUSSIAN).rng(0);
        let a = random_psd(3, &mut rng);
        assert_eq!(
            gaussian_gaussian_tail_bound(&a, &a, PNorm::TWO, 1.0).unwrap(),
            0.0
        );
        let i2 = PsdMatrix::identity(2);
        let i2b = PsdMatrix::diagonal(&[1.21, 1.21]);
        let v = gaussian_gaussian_tail_bound(&i2, &i2b, PNorm::INF, 1.0).unwrap();
        let expected = 4.0 * (-50.0f64).exp();
        assert!((v / expected - 1.0).abs() < 1e-10, "{v} vs {expected}");
        assert!(gaussian_gaussian_tail_bound(&i2, &i2b, PNorm::INF, 0.0).is_err());
    }

    #[test]
    fn sqrt_perturbation_examples() {
        let z = PsdMatrix::zeros(2);
        assert!((sqrt_perturbation_check(&z, 0.5).unwrap() - 0.5).abs() < 1e-14);
        let id = PsdMatrix::identity(3);
        let v = sqrt_perturbation_check(&id, 1.0).unwrap();
        assert!((v - (2f64.sqrt() - 1.0)).abs() < 1e-14);
        assert!(sqrt_perturbation_check(&id, 0.0).is_err());
    }

    #[test]
    fn norm_product_bound_dominates_mc() {
        let mut rng = Streams::new(2, tag::GAUSSIAN).rng(0);
        let cov = random_psd(4, &mut rng);
        let law = GaussianLaw::new(cov.clone());
        let draws = law.sample_rows(20_000, &mut rng);
        for k in [2u32, 3] {
            let mc: f64 = draws
                .row_iter()
                .map(|r| {
                    let v: Vec<f64> = r.iter().copied().collect();
                    lp_norm(&v, PNorm::TWO).powi(k as i32) * lp_norm(&v, PNorm::INF)
                })
                .sum::<f64>()
                / 20_000.0;
            assert!(mc <= gaussian_norm_product_bound(&cov, k).unwrap());
        }
        assert!(gaussian_norm_product_bound(&cov, 4).is_err());
    }

    #[test]
    fn operator_norms() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
        assert!((operator_norm(&a, PNorm::ONE) - 0.6).abs() < 1e-15);
        assert!((operator_norm(&a, PNorm::INF) - 0.7).abs() < 1e-15);
        let two = operator_norm(&a, PNorm::TWO);
        assert!(two <= 0.7 && two >= 0.5);
        let s = DMatrix::from_row_slice(1, 1, &[0.5]);
        assert_eq!(operator_norm(&s, PNorm::Finite(3.0)), 0.5);
    }
}
