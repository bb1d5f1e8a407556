//! Monte Carlo coverage of the uniform bands.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::localpoly::{fit_localpoly, localpoly_sup_draws, LocalPolySpec};
use super::series::{fit_series, series_sup_draws, PartitionBasis};
use super::{assemble_band, check_band_args, check_grid, default_eval_grid, BandResult};
use crate::dgp::{simulate_regression_with, MuFn, RegressionDgpSpec, SigmaFn};
use crate::error::{Error, Result};
use crate::rng::{tag, Streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum Pipeline {
    Series(PartitionBasis),
    LocalPoly(LocalPolySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSpec {
    pub dgp: RegressionDgpSpec,
    pub pipeline: Pipeline,
    pub tau: f64,
    pub bootstrap_draws: usize,
    pub datasets: usize,
    pub eval_grid: Vec<f64>,
}

/// Noise scale of the default coverage designs. Chosen so that the
/// smoothing bias of sin(2πw) stays well below the pointwise standard
/// deviation of both estimators.
pub const SERIES_NOISE: f64 = 1.0;
pub const LOCALPOLY_NOISE: f64 = 2.0;

impl CoverageSpec {
    /// 500 datasets of n = 2000, 10 linear cells, sin(2πw) plus Gaussian noise.
    pub fn series_default() -> Self {
        Self {
            dgp: RegressionDgpSpec::new(2000, MuFn::Sin2Pi, SigmaFn::Constant(SERIES_NOISE)),
            pipeline: Pipeline::Series(PartitionBasis { k_cells: 10, degree: 1 }),
            tau: 0.95,
            bootstrap_draws: 1000,
            datasets: 500,
            eval_grid: default_eval_grid(),
        }
    }

    /// 300 datasets of n = 5000, local linear with h = 0.1.
    pub fn localpoly_default() -> Self {
        Self {
            dgp: RegressionDgpSpec::new(5000, MuFn::Sin2Pi, SigmaFn::Constant(LOCALPOLY_NOISE)),
            pipeline: Pipeline::LocalPoly(LocalPolySpec {
                gamma: 1,
                h: 0.1,
                kernel: super::Kernel::Epanechnikov,
            }),
            tau: 0.95,
            bootstrap_draws: 1000,
            datasets: 300,
            eval_grid: default_eval_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        check_band_args(self.tau, self.bootstrap_draws)?;
        check_grid(&self.eval_grid)?;
        if self.datasets == 0 {
            return Err(Error::invalid("datasets", "need at least one dataset"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub datasets: usize,
    pub covered: usize,
    pub coverage: f64,
    /// Binomial standard error of `coverage`.
    pub se: f64,
    pub mean_q_tau: f64,
    pub mean_half_width: f64,
    pub tau: f64,
}

/// Band for one dataset. Data come from `streams.rng(j)`, the bootstrap
/// from `streams.child(j)`.
pub fn coverage_band(spec: &CoverageSpec, streams: &Streams, j: u64) -> Result<BandResult> {
    let data = simulate_regression_with(&spec.dgp, &mut streams.rng(j))?;
    let boot = streams.child(j);
    match spec.pipeline {
        Pipeline::Series(basis) => {
            let fit = fit_series(&data, basis)?;
            let (rho, sups) = series_sup_draws(&fit, &spec.eval_grid, spec.bootstrap_draws, &boot)?;
            let mu = spec.eval_grid.iter().map(|&w| fit.mu_hat(w)).collect();
            Ok(assemble_band(spec.eval_grid.clone(), mu, rho, &sups, spec.tau))
        }
        Pipeline::LocalPoly(lp) => {
            let fit = fit_localpoly(&data, lp, &spec.eval_grid)?;
            let (rho, sups) = localpoly_sup_draws(&fit, spec.bootstrap_draws, &boot)?;
            Ok(assemble_band(fit.eval_grid.clone(), fit.mu_hat.clone(), rho, &sups, spec.tau))
        }
    }
}

pub fn run_coverage(spec: &CoverageSpec, seed: u64) -> Result<CoverageReport> {
    spec.validate()?;
    let streams = Streams::new(seed, tag::COVERAGE);
    let mu = spec.dgp.mu;
    let per: Vec<(bool, f64, f64)> = (0..spec.datasets as u64)
        .into_par_iter()
        .map(|j| {
            let band = coverage_band(spec, &streams, j)?;
            let half = band
                .upper
                .iter()
                .zip(&band.lower)
                .map(|(u, l)| 0.5 * (u - l))
                .sum::<f64>()
                / band.eval_grid.len() as f64;
            Ok((band.covers(|w| mu.eval(w)), band.q_tau, half))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let covered = per.iter().filter(|r| r.0).count();
    let coverage = covered as f64 / n;
    Ok(CoverageReport {
        datasets: per.len(),
        covered,
        coverage,
        se: (coverage * (1.0 - coverage) / n).sqrt(),
        mean_q_tau: per.iter().map(|r| r.1).sum::<f64>() / n,
        mean_half_width: per.iter().map(|r| r.2).sum::<f64>() / n,
        tau: spec.tau,
    })
}
