//! Covariance of a Gaussian-kernel density estimator on a mesh for uniform
//! data, and the upper bound on its smallest eigenvalue.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::PsdMatrix;
use crate::numeric::{gauss_integral, normal_interval};
use crate::rng::{tag, Streams};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Mesh `x_j = a + (j − 1)δ`, `j = 1..N`, with `N = ⌊1 + (1 − 2a)/δ⌋`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeGrid {
    pub a: f64,
    pub h: f64,
    pub delta: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub points: Vec<f64>,
}

impl KdeGrid {
    pub fn new(a: f64, h: f64, delta: f64, n: usize) -> Result<Self> {
        if !(a > 0.0 && a <= 0.25) {
            return Err(Error::invalid("a", format!("need a in (0, 1/4], got {a}")));
        }
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::invalid("h", format!("need h in (0, 1], got {h}")));
        }
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::invalid("delta", format!("need delta in (0, 1/2), got {delta}")));
        }
        if n == 0 {
            return Err(Error::invalid("n", "sample size must be positive"));
        }
        // the guard keeps exact ratios such as 0.6/0.1 from rounding down
        let ratio = (1.0 - 2.0 * a) / delta;
        let big_n = (1.0 + ratio * (1.0 + 1e-9)).floor() as usize;
        let points = (0..big_n).map(|j| a + j as f64 * delta).collect();
        Ok(Self {
            a,
            h,
            delta,
            n,
            big_n,
            points,
        })
    }

    /// `I(x) = Φ((1 − x)/h) − Φ(−x/h)`, the kernel mass inside `[0, 1]`.
    pub fn kernel_mass(&self, x: f64) -> f64 {
        normal_interval(-x / self.h, (1.0 - x) / self.h)
    }
}

/// Exact and optionally simulated `nh · Var[ĝ(x_j)]`.
#[derive(Debug, Clone)]
pub struct KdeCovariance {
    pub grid: KdeGrid,
    pub exact: PsdMatrix,
    pub simulated: Option<PsdMatrix>,
    pub resamples: usize,
}

/// Closed-form entry `(j, l)` of `nh · Cov[ĝ(x_j), ĝ(x_l)]`.
pub fn exact_entry(grid: &KdeGrid, xj: f64, xl: f64) -> f64 {
    let h = grid.h;
    let gauss = (-(xj - xl).powi(2) / (4.0 * h * h)).exp();
    let integral = gauss_integral(-(xj + xl) / (2.0 * h), (2.0 - xj - xl) / (2.0 * h));
    gauss * integral / (2.0 * std::f64::consts::PI) - h * grid.kernel_mass(xj) * grid.kernel_mass(xl)
}

pub fn exact_cov(grid: &KdeGrid) -> Result<KdeCovariance> {
    let n = grid.big_n;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for l in 0..=j {
            let v = exact_entry(grid, grid.points[j], grid.points[l]);
            m[(j, l)] = v;
            m[(l, j)] = v;
        }
    }
    Ok(KdeCovariance {
        grid: grid.clone(),
        exact: PsdMatrix::new(m)?,
        simulated: None,
        resamples: 0,
    })
}

/// `√(nh) ĝ(x_j)` for one sample of `n` uniforms.
fn scaled_estimate<R: Rng + ?Sized>(grid: &KdeGrid, rng: &mut R) -> Vec<f64> {
    let h = grid.h;
    let xs: Vec<f64> = (0..grid.n).map(|_| rng.random::<f64>()).collect();
    let scale = 1.0 / (grid.n as f64 * h).sqrt();
    grid.points
        .iter()
        .map(|&x| {
            let s: f64 = xs
                .iter()
                .map(|&xi| {
                    let u = (xi - x) / h;
                    (-0.5 * u * u).exp()
                })
                .sum();
            scale * INV_SQRT_2PI * s
        })
        .collect()
}

/// Resampled `√(nh) ĝ` on the mesh, one row per resample.
pub fn simulate_samples(grid: &KdeGrid, resamples: usize, streams: &Streams) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = (0..resamples)
        .into_par_iter()
        .map(|r| scaled_estimate(grid, &mut streams.rng(r as u64)))
        .collect();
    DMatrix::from_fn(resamples, grid.big_n, |r, j| rows[r][j])
}

/// Unbiased sample covariance of the rows.
pub fn sample_covariance(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let r = samples.nrows();
    let mean = samples.row_mean();
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let c = centered.transpose() * &centered / (r as f64 - 1.0);
    (&c + c.transpose()) * 0.5
}

pub fn simulate_cov_with(grid: &KdeGrid, resamples: usize, streams: &Streams) -> Result<PsdMatrix> {
    if resamples < 2 {
        return Err(Error::invalid("resamples", "need at least 2 resamples"));
    }
    PsdMatrix::new(sample_covariance(&simulate_samples(grid, resamples, streams)))
}

/// Empirical covariance of `√(nh) ĝ` across `resamples` datasets.
pub fn simulate_cov(grid: &KdeGrid, resamples: usize, seed: u64) -> Result<PsdMatrix> {
    simulate_cov_with(grid, resamples, &Streams::new(seed, tag::KDE))
}

/// `2 e^{−h²/δ²} + (h/(π a δ)) e^{−a²/h²}`.
pub fn eigen_upper_bound(grid: &KdeGrid) -> f64 {
    let (a, h, d) = (grid.a, grid.h, grid.delta);
    2.0 * (-(h * h) / (d * d)).exp() + h / (std::f64::consts::PI * a * d) * (-(a * a) / (h * h)).exp()
}

/// `sup_{x ∈ [a, 1−a]} |E ĝ(x) − 1| ≤ (h/a) √(2/π) e^{−a²/(2h²)}`.
pub fn bias_bound(grid: &KdeGrid) -> f64 {
    let (a, h) = (grid.a, grid.h);
    h / a * (2.0 / std::f64::consts::PI).sqrt() * (-(a * a) / (2.0 * h * h)).exp()
}

/// Smallest eigenvalue of `m`, recomputed as the compensated Rayleigh
/// quotient of its eigenvector so that values far below `ε·λ_max` keep
/// their magnitude. Clamped at zero.
pub fn certified_min_eigenvalue(m: &PsdMatrix) -> f64 {
    let d = m.dim();
    let v = m.eigenvectors().column(d - 1).into_owned();
    m.rayleigh_quotient(&v).max(0.0)
}

/// One row of the minimum-eigenvalue study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinEigenRow {
    pub delta: f64,
    pub h: f64,
    pub n: usize,
    pub a: f64,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub lambda_min_sim: f64,
    pub lambda_min_exact: f64,
    pub upper_bound: f64,
    pub rank_sim: usize,
    /// Delta-method standard error of `lambda_min_sim`.
    pub lambda_min_sim_se: f64,
    /// Simulated value above the bound by more than three standard errors.
    pub sim_exceeds_bound: bool,
}

pub fn min_eigen_report_with(grid: &KdeGrid, resamples: usize, streams: &Streams) -> Result<MinEigenRow> {
    if resamples < 2 {
        return Err(Error::invalid("resamples", "need at least 2 resamples"));
    }
    let exact = exact_cov(grid)?.exact;
    let samples = simulate_samples(grid, resamples, streams);
    let sim = PsdMatrix::new(sample_covariance(&samples))?;
    let lambda_sim = sim.min_eigenvalue();

    // Var of the quadratic form (vᵀ(x − x̄))² across resamples
    let v = sim.eigenvectors().column(grid.big_n - 1).into_owned();
    let mean = samples.row_mean().transpose();
    let q: Vec<f64> = samples
        .row_iter()
        .map(|row| {
            let c: DVector<f64> = row.transpose() - &mean;
            v.dot(&c).powi(2)
        })
        .collect();
    let qm = q.iter().sum::<f64>() / q.len() as f64;
    let qv = q.iter().map(|x| (x - qm).powi(2)).sum::<f64>() / (q.len() as f64 - 1.0);
    let se = (qv / resamples as f64).sqrt();

    let bound = eigen_upper_bound(grid);
    Ok(MinEigenRow {
        delta: grid.delta,
        h: grid.h,
        n: grid.n,
        a: grid.a,
        big_n: grid.big_n,
        lambda_min_sim: lambda_sim,
        lambda_min_sim_se: se,
        lambda_min_exact: certified_min_eigenvalue(&exact),
        upper_bound: bound,
        rank_sim: sim.rank(1e-10),
        sim_exceeds_bound: lambda_sim > bound + 3.0 * se,
    })
}

pub fn min_eigen_report(grid: &KdeGrid, resamples: usize, seed: u64) -> Result<MinEigenRow> {
    min_eigen_report_with(grid, resamples, &Streams::new(seed, tag::KDE))
}

/// Rows for each mesh spacing in `deltas`; spacing `j` uses substream family
/// `child(j)` of the seed.
pub fn min_eigen_sweep(
    a: f64,
    h: f64,
    n: usize,
    deltas: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<Vec<MinEigenRow>> {
    let base = Streams::new(seed, tag::KDE);
    deltas
        .iter()
        .enumerate()
        .map(|(j, &delta)| {
            let grid = KdeGrid::new(a, h, delta, n)?;
            min_eigen_report_with(&grid, resamples, &base.child(j as u64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_size() {
        assert_eq!(KdeGrid::new(0.2, 0.03, 0.1, 100).unwrap().big_n, 7);
        assert_eq!(KdeGrid::new(0.2, 0.03, 0.005, 100).unwrap().big_n, 121);
        let g = KdeGrid::new(0.2, 0.03, 0.45, 100).unwrap();
        assert_eq!(g.big_n, 2);
        assert!(g.points.iter().all(|x| *x >= 0.2 && *x <= 0.8 + 1e-12));
        assert!(KdeGrid::new(0.3, 0.03, 0.1, 100).is_err());
        assert!(KdeGrid::new(0.2, 0.0, 0.1, 100).is_err());
        assert!(KdeGrid::new(0.2, 0.03, 0.5, 100).is_err());
    }

    #[test]
    fn eigen_bound_examples() {
        let g = KdeGrid::new(0.2, 0.03, 0.01, 100).unwrap();
        let expected = 2.0 * (-9.0f64).exp()
            + 0.03 / (std::f64::consts::PI * 0.2 * 0.01) * (-(0.04f64 / 0.0009)).exp();
        assert!((eigen_upper_bound(&g) / expected - 1.0).abs() < 1e-12);
        assert!((eigen_upper_bound(&g) - 2.4681960817335934e-4).abs() < 1e-16);

        let g = KdeGrid::new(0.2, 0.01, 0.01, 100).unwrap();
        let expected = 2.0 * (-1.0f64).exp() + 1.0 / (std::f64::consts::PI * 0.2) * (-400.0f64).exp();
        assert!((eigen_upper_bound(&g) / expected - 1.0).abs() < 1e-12);
        assert!((eigen_upper_bound(&g) - 0.73576).abs() < 1e-5);
    }

    #[test]
    fn bias_bound_examples() {
        let g = KdeGrid::new(0.2, 0.03, 0.01, 100).unwrap();
        let expected = 0.15 * (2.0 / std::f64::consts::PI).sqrt() * (-0.04f64 / 0.0018).exp();
        assert!((bias_bound(&g) / expected - 1.0).abs() < 1e-12);
        let g = KdeGrid::new(0.2, 0.1, 0.01, 100).unwrap();
        assert!((bias_bound(&g) - 0.5 * (2.0 / std::f64::consts::PI).sqrt() * (-2.0f64).exp()).abs() < 1e-15);
        let g = KdeGrid::new(0.2, 1e-3, 0.01, 100).unwrap();
        assert_eq!(bias_bound(&g), 0.0);
    }

    #[test]
    fn exact_cov_structure() {
        let g = KdeGrid::new(0.25, 0.01, 0.1, 100).unwrap();
        let c = exact_cov(&g).unwrap();
        let m = c.exact.matrix();
        for j in 0..g.big_n {
            let x = g.points[j];
            let diag = 0.5 / std::f64::consts::PI.sqrt() - g.h * g.kernel_mass(x).powi(2);
            assert!((m[(j, j)] - diag).abs() < 1e-12);
            assert!(m[(j, j)] <= 0.5 / std::f64::consts::PI.sqrt());
            for l in 0..g.big_n {
                assert_eq!(m[(j, l)], m[(l, j)]);
                if j != l {
                    // separated points: only the product term survives
                    assert!((m[(j, l)] + g.h).abs() < 1e-6);
                }
            }
        }
        assert!(c.exact.raw_min_eigenvalue() >= -1e-10);
    }

    #[test]
    fn single_point_grid() {
        let g = KdeGrid::new(0.25, 0.03, 0.49, 100).unwrap();
        assert_eq!(g.big_n, 2);
        let g = KdeGrid { big_n: 1, points: vec![0.5], ..g };
        let c = exact_cov(&g).unwrap();
        assert_eq!(certified_min_eigenvalue(&c.exact), c.exact.matrix()[(0, 0)]);
        let sim = simulate_cov(&g, 50, 1).unwrap();
        assert!(sim.matrix()[(0, 0)] > 0.0);
    }

    #[test]
    fn simulation_is_deterministic() {
        let g = KdeGrid::new(0.2, 0.03, 0.1, 50).unwrap();
        assert_eq!(simulate_cov(&g, 20, 9).unwrap(), simulate_cov(&g, 20, 9).unwrap());
        assert!(simulate_cov(&g, 1, 9).is_err());
    }
}
