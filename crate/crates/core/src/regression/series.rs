//! Least-squares regression on piecewise polynomials over a uniform
//! partition of `[0, 1]`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    assemble_band, bootstrap_sup, check_band_args, check_grid, check_rho, floor_variances, BandResult,
    SupDraws,
};
use crate::dgp::RegressionData;
use crate::error::{Error, Result};
use crate::gaussian::PsdMatrix;
use crate::rng::{tag, Streams};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Piecewise polynomials of degree 0 or 1 on `k_cells` equal cells.
///
/// On cell `c` with centre `m` and width `b` the functions are `1` and
/// `√3 · 2(w − m)/b`, which are orthonormal under the uniform law on the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionBasis {
    pub k_cells: usize,
    pub degree: usize,
}

impl PartitionBasis {
    pub fn new(k_cells: usize, degree: usize) -> Result<Self> {
        if k_cells == 0 {
            return Err(Error::invalid("k_cells", "need at least one cell"));
        }
        if degree > 1 {
            return Err(Error::invalid("degree", format!("must be 0 or 1, got {degree}")));
        }
        Ok(Self { k_cells, degree })
    }

    /// Number of basis functions.
    pub fn k(&self) -> usize {
        self.k_cells * self.per_cell()
    }

    pub fn per_cell(&self) -> usize {
        self.degree + 1
    }

    pub fn cell(&self, w: f64) -> usize {
        ((w * self.k_cells as f64).floor().max(0.0) as usize).min(self.k_cells - 1)
    }

    /// Cell index and the nonzero basis values at `w`.
    pub fn local(&self, w: f64) -> (usize, [f64; 2]) {
        let c = self.cell(w);
        if self.degree == 0 {
            return (c, [1.0, 0.0]);
        }
        let width = 1.0 / self.k_cells as f64;
        let centre = (c as f64 + 0.5) * width;
        (c, [1.0, SQRT_3 * 2.0 * (w - centre) / width])
    }

    /// Dense `p(w)`.
    pub fn eval(&self, w: f64) -> DVector<f64> {
        let (c, v) = self.local(w);
        let mut p = DVector::zeros(self.k());
        for j in 0..self.per_cell() {
            p[c * self.per_cell() + j] = v[j];
        }
        p
    }
}

#[derive(Debug, Clone)]
pub struct SeriesFit {
    pub basis: PartitionBasis,
    /// `Ĥ = Σ p(W_i) p(W_i)ᵀ`.
    pub h_hat: PsdMatrix,
    pub coef: DVector<f64>,
    pub residuals: Vec<f64>,
    /// Mean squared residual per cell.
    pub sigma2_hat: Vec<f64>,
    /// `Σ p(W_i) p(W_i)ᵀ σ̂²(W_i)`.
    pub var_s_hat: PsdMatrix,
    h_inv: DMatrix<f64>,
    w: Vec<f64>,
}

impl SeriesFit {
    pub fn mu_hat(&self, w: f64) -> f64 {
        self.basis.eval(w).dot(&self.coef)
    }

    pub fn sigma_hat(&self, w: f64) -> f64 {
        self.sigma2_hat[self.basis.cell(w)].sqrt()
    }

    pub fn h_inverse(&self) -> &DMatrix<f64> {
        &self.h_inv
    }

    /// `ρ̂(w, w') = p(w)ᵀ Ĥ⁻¹ Var̂[S] Ĥ⁻¹ p(w')`.
    pub fn rho_hat(&self, w: f64, w2: f64) -> f64 {
        let a = &self.h_inv * self.basis.eval(w);
        let b = &self.h_inv * self.basis.eval(w2);
        (a.transpose() * self.var_s_hat.matrix() * b)[(0, 0)]
    }

    pub fn regressors(&self) -> &[f64] {
        &self.w
    }
}

pub fn fit_series(data: &RegressionData, basis: PartitionBasis) -> Result<SeriesFit> {
    let k = basis.k();
    let per = basis.per_cell();

    let mut by_cell: Vec<Vec<f64>> = vec![Vec::new(); basis.k_cells];
    for &w in &data.w {
        by_cell[basis.cell(w)].push(w);
    }
    for (cell, ws) in by_cell.iter_mut().enumerate() {
        ws.sort_by(f64::total_cmp);
        ws.dedup();
        if ws.len() < per {
            return Err(Error::RankDeficient {
                cell,
                count: ws.len(),
                needed: per,
            });
        }
    }

    let mut h = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    let locals: Vec<(usize, [f64; 2])> = data.w.iter().map(|&w| basis.local(w)).collect();
    for ((c, v), &y) in locals.iter().zip(&data.y) {
        let o = c * per;
        for a in 0..per {
            rhs[o + a] += v[a] * y;
            for b in 0..per {
                h[(o + a, o + b)] += v[a] * v[b];
            }
        }
    }
    let chol = Cholesky::new(h.clone()).ok_or(Error::RankDeficient {
        cell: 0,
        count: 0,
        needed: per,
    })?;
    let coef = chol.solve(&rhs);
    let h_inv = chol.inverse();

    let residuals: Vec<f64> = locals
        .iter()
        .zip(&data.y)
        .map(|((c, v), &y)| {
            let fitted: f64 = (0..per).map(|a| v[a] * coef[c * per + a]).sum();
            y - fitted
        })
        .collect();

    let mut sums = vec![0.0; basis.k_cells];
    let mut counts = vec![0usize; basis.k_cells];
    for ((c, _), r) in locals.iter().zip(&residuals) {
        sums[*c] += r * r;
        counts[*c] += 1;
    }
    let mut sigma2: Vec<f64> = sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();
    floor_variances(&mut sigma2, &data.y);

    let mut var_s = DMatrix::zeros(k, k);
    for (c, v) in &locals {
        let o = c * per;
        for a in 0..per {
            for b in 0..per {
                var_s[(o + a, o + b)] += v[a] * v[b] * sigma2[*c];
            }
        }
    }

    Ok(SeriesFit {
        basis,
        h_hat: PsdMatrix::new(h)?,
        coef,
        residuals,
        sigma2_hat: sigma2,
        var_s_hat: PsdMatrix::new(var_s)?,
        h_inv,
        w: data.w.clone(),
    })
}

/// Bootstrap draws of the Studentized sup over `eval_grid`, with
/// `Ĝ_b(w) = p(w)ᵀ Ĥ⁻¹ Σ_i p(W_i) σ̂(W_i) ξ_{b,i}`.
pub fn series_sup_draws(
    fit: &SeriesFit,
    eval_grid: &[f64],
    draws: usize,
    streams: &Streams,
) -> Result<(Vec<f64>, SupDraws)> {
    check_grid(eval_grid)?;
    let rho: Vec<f64> = eval_grid.iter().map(|&w| fit.rho_hat(w, w)).collect();
    check_rho(eval_grid, &rho)?;

    let basis = fit.basis;
    let per = basis.per_cell();
    let rows: Vec<DVector<f64>> = eval_grid
        .iter()
        .map(|&w| &fit.h_inv * basis.eval(w))
        .collect();
    let obs: Vec<(usize, [f64; 2])> = fit
        .w
        .iter()
        .map(|&w| {
            let (c, v) = basis.local(w);
            let s = fit.sigma2_hat[c].sqrt();
            (c * per, [v[0] * s, v[1] * s])
        })
        .collect();
    let k = basis.k();

    let sups = bootstrap_sup(&rho, draws, streams, |rng, out| {
        let mut score = vec![0.0; k];
        for (o, v) in &obs {
            let xi: f64 = rng.sample(StandardNormal);
            for a in 0..per {
                score[o + a] += v[a] * xi;
            }
        }
        for (g, row) in out.iter_mut().zip(&rows) {
            *g = row.iter().zip(&score).map(|(r, s)| r * s).sum();
        }
    });
    Ok((rho, sups))
}

/// Uniform band `μ̂(w) ± q̂(τ) √ρ̂(w, w)` on `eval_grid`.
pub fn band_series(
    fit: &SeriesFit,
    tau: f64,
    eval_grid: &[f64],
    bootstrap_draws: usize,
    seed: u64,
) -> Result<BandResult> {
    check_band_args(tau, bootstrap_draws)?;
    let streams = Streams::new(seed, tag::BAND);
    let (rho, sups) = series_sup_draws(fit, eval_grid, bootstrap_draws, &streams)?;
    let mu: Vec<f64> = eval_grid.iter().map(|&w| fit.mu_hat(w)).collect();
    Ok(assemble_band(eval_grid.to_vec(), mu, rho, &sups, tau))
}
