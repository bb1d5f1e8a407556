//! Nonparametric regression with Studentized multiplier-bootstrap bands.

pub mod coverage;
pub mod localpoly;
pub mod score;
pub mod series;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ecdf_quantile, linspace, sort_floats};
use crate::rng::{Rng, Streams};

pub use crate::dgp::RegressionData;
pub use coverage::{run_coverage, CoverageReport, CoverageSpec, Pipeline};
pub use localpoly::{band_localpoly, fit_localpoly, Kernel, LocalPolyFit, LocalPolySpec};
pub use score::{coupling_order, series_score_paths};
pub use series::{band_series, fit_series, PartitionBasis, SeriesFit};

/// Default sup discretisation: 101 points on `[0.05, 0.95]`.
pub fn default_eval_grid() -> Vec<f64> {
    linspace(0.05, 0.95, 101)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub eval_grid: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub rho_hat_diag: Vec<f64>,
    pub q_tau: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub tau: f64,
    pub bootstrap_draws: usize,
}

impl BandResult {
    /// Whether `mu` lies inside the band at every grid point.
    pub fn covers(&self, mu: impl Fn(f64) -> f64) -> bool {
        self.eval_grid
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&w, (&lo, &hi))| {
                let m = mu(w);
                lo <= m && m <= hi
            })
    }
}

/// Sorted bootstrap draws of `sup_w |Ĝ(w)| / √ρ̂(w, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupDraws {
    sorted: Vec<f64>,
}

impl SupDraws {
    /// Inverted-ECDF quantile at level `tau`.
    pub fn quantile(&self, tau: f64) -> f64 {
        ecdf_quantile(&self.sorted, tau)
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }
}

pub(crate) fn check_band_args(tau: f64, draws: usize) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("tau", format!("need tau in (0, 1), got {tau}")));
    }
    if draws < 100 {
        return Err(Error::invalid("bootstrap_draws", format!("need at least 100, got {draws}")));
    }
    Ok(())
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("eval_grid", "empty evaluation grid"));
    }
    if grid.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::invalid("eval_grid", "points must lie in [0, 1]"));
    }
    Ok(())
}

/// Zeroes variance estimates at rounding level relative to the response,
/// so that exact fits are reported as degenerate instead of yielding
/// bands of width 1e-16.
pub(crate) fn floor_variances(sigma2: &mut [f64], y: &[f64]) {
    let scale = y.iter().map(|v| v * v).sum::<f64>() / y.len().max(1) as f64;
    let floor = 1e-24 * scale;
    for s in sigma2.iter_mut() {
        if *s <= floor {
            *s = 0.0;
        }
    }
}

pub(crate) fn check_rho(grid: &[f64], rho: &[f64]) -> Result<()> {
    for (&w, &r) in grid.iter().zip(rho) {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::DegenerateVariance { w, value: r });
        }
    }
    Ok(())
}

/// Runs `draws` bootstrap replications. `fill` writes one draw of `Ĝ` on
/// the grid using the supplied generator; draw `b` uses `streams.rng(b)`.
pub(crate) fn bootstrap_sup<F>(rho: &[f64], draws: usize, streams: &Streams, fill: F) -> SupDraws
where
    F: Fn(&mut Rng, &mut [f64]) + Sync,
{
    let inv_sd: Vec<f64> = rho.iter().map(|r| 1.0 / r.sqrt()).collect();
    let mut sorted: Vec<f64> = (0..draws)
        .into_par_iter()
        .map_init(
            || vec![0.0; rho.len()],
            |buf, b| {
                let mut rng = streams.rng(b as u64);
                fill(&mut rng, buf);
                buf.iter()
                    .zip(&inv_sd)
                    .fold(0.0f64, |m, (g, s)| m.max((g * s).abs()))
            },
        )
        .collect();
    sort_floats(&mut sorted);
    SupDraws { sorted }
}

pub(crate) fn assemble_band(
    eval_grid: Vec<f64>,
    mu_hat: Vec<f64>,
    rho: Vec<f64>,
    sups: &SupDraws,
    tau: f64,
) -> BandResult {
    let q = sups.quantile(tau);
    let half: Vec<f64> = rho.iter().map(|r| q * r.sqrt()).collect();
    BandResult {
        lower: mu_hat.iter().zip(&half).map(|(m, h)| m - h).collect(),
        upper: mu_hat.iter().zip(&half).map(|(m, h)| m + h).collect(),
        eval_grid,
        mu_hat,
        rho_hat_diag: rho,
        q_tau: q,
        tau,
        bootstrap_draws: sups.len(),
    }
}
