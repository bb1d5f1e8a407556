//! Local polynomial regression with compactly supported kernels.

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
use crate::rng::{tag, Streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Epanechnikov,
    Triangular,
}

impl Kernel {
    /// Kernel on `[−1, 1]`.
    pub fn eval(&self, u: f64) -> f64 {
        let a = u.abs();
        if a >= 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Epanechnikov => 0.75 * (1.0 - u * u),
            Kernel::Triangular => 1.0 - a,
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            "triangular" => Ok(Kernel::Triangular),
            _ => Err(Error::invalid("kernel", format!("unknown kernel `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalPolySpec {
    pub gamma: usize,
    pub h: f64,
    pub kernel: Kernel,
}

impl LocalPolySpec {
    pub fn new(gamma: usize, h: f64, kernel: Kernel) -> Result<Self> {
        if gamma < 1 {
            return Err(Error::invalid("gamma", "polynomial order must be at least 1"));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid("h", format!("need a finite positive bandwidth, got {h}")));
        }
        Ok(Self { gamma, h, kernel })
    }
}

/// `μ̂(w) = Σ_i l_i(w) Y_i` restricted to the window, with `l_i` stored for
/// the contiguous run `start..start + values.len()` of the sorted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowWeights {
    pub start: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LocalPolyFit {
    pub spec: LocalPolySpec,
    pub eval_grid: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub weights: Vec<WindowWeights>,
    /// Data sorted by regressor; weights index into these.
    pub w_sorted: Vec<f64>,
    pub y_sorted: Vec<f64>,
}

/// Linear weights `l_i(w) = e₁ᵀ Ĥ(w)⁻¹ K_h(W_i − w) p_h(W_i − w)` over the
/// window around `w`.
pub fn local_weights(w_sorted: &[f64], spec: &LocalPolySpec, w: f64) -> Result<WindowWeights> {
    let h = spec.h;
    let start = w_sorted.partition_point(|&x| x <= w - h);
    let end = w_sorted.partition_point(|&x| x < w + h);
    let window = &w_sorted[start..end];
    let dim = spec.gamma + 1;

    let mut distinct = 0;
    let mut last = f64::NAN;
    for &x in window {
        if x != last && spec.kernel.eval((x - w) / h) > 0.0 {
            distinct += 1;
            last = x;
        }
    }
    if distinct < dim {
        return Err(Error::WindowDegenerate { w });
    }

    let mut gram = DMatrix::zeros(dim, dim);
    let mut powers = vec![0.0; dim];
    let fill = |u: f64, p: &mut [f64]| {
        p[0] = 1.0;
        for j in 1..dim {
            p[j] = p[j - 1] * u;
        }
    };
    for &x in window {
        let u = (x - w) / h;
        let k = spec.kernel.eval(u);
        fill(u, &mut powers);
        for a in 0..dim {
            for b in 0..=a {
                gram[(a, b)] += k * powers[a] * powers[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let chol = Cholesky::new(gram).ok_or(Error::WindowDegenerate { w })?;
    let mut e1 = DVector::zeros(dim);
    e1[0] = 1.0;
    let x = chol.solve(&e1);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::WindowDegenerate { w });
    }
    let values = window
        .iter()
        .map(|&xi| {
            let u = (xi - w) / h;
            fill(u, &mut powers);
            spec.kernel.eval(u) * powers.iter().zip(x.iter()).map(|(p, c)| p * c).sum::<f64>()
        })
        .collect();
    Ok(WindowWeights { start, values })
}

fn apply(weights: &WindowWeights, y: &[f64]) -> f64 {
    weights
        .values
        .iter()
        .zip(&y[weights.start..])
        .map(|(l, y)| l * y)
        .sum()
}

pub fn fit_localpoly(data: &RegressionData, spec: LocalPolySpec, eval_grid: &[f64]) -> Result<LocalPolyFit> {
    check_grid(eval_grid)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.w[a].total_cmp(&data.w[b]));
    let w_sorted: Vec<f64> = order.iter().map(|&i| data.w[i]).collect();
    let y_sorted: Vec<f64> = order.iter().map(|&i| data.y[i]).collect();

    let weights = eval_grid
        .iter()
        .map(|&w| local_weights(&w_sorted, &spec, w))
        .collect::<Result<Vec<_>>>()?;
    let mu_hat = weights.iter().map(|l| apply(l, &y_sorted)).collect();
    Ok(LocalPolyFit {
        spec,
        eval_grid: eval_grid.to_vec(),
        mu_hat,
        weights,
        w_sorted,
        y_sorted,
    })
}

impl LocalPolyFit {
    /// Residuals `Y_i − μ̂(W_i)` in sorted order.
    pub fn residuals(&self) -> Result<Vec<f64>> {
        self.w_sorted
            .iter()
            .zip(&self.y_sorted)
            .map(|(&w, &y)| Ok(y - apply(&local_weights(&self.w_sorted, &self.spec, w)?, &self.y_sorted)))
            .collect()
    }

    /// `σ̂²(W_i)`: kernel-weighted mean of squared residuals over the window
    /// around each `W_i`, in sorted order.
    pub fn sigma2_hat(&self) -> Result<Vec<f64>> {
        let r2: Vec<f64> = self.residuals()?.iter().map(|r| r * r).collect();
        let h = self.spec.h;
        let ws = &self.w_sorted;
        let mut out: Vec<f64> = ws
            .iter()
            .map(|&w| {
                let start = ws.partition_point(|&x| x <= w - h);
                let end = ws.partition_point(|&x| x < w + h);
                let (mut num, mut den) = (0.0, 0.0);
                for j in start..end {
                    let k = self.spec.kernel.eval((ws[j] - w) / h);
                    num += k * r2[j];
                    den += k;
                }
                num / den
            })
            .collect();
        floor_variances(&mut out, &self.y_sorted);
        Ok(out)
    }

    /// `ρ̂(w, w) = Σ_i l_i(w)² σ̂²(W_i)` on the evaluation grid.
    pub fn rho_hat(&self, sigma2: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|l| {
                l.values
                    .iter()
                    .zip(&sigma2[l.start..])
                    .map(|(v, s)| v * v * s)
                    .sum()
            })
            .collect()
    }
}

/// Bootstrap draws of the Studentized sup, `Ĝ_b(w) = Σ_i l_i(w) σ̂(W_i) ξ_{b,i}`.
pub fn localpoly_sup_draws(fit: &LocalPolyFit, draws: usize, streams: &Streams) -> Result<(Vec<f64>, SupDraws)> {
    let sigma2 = fit.sigma2_hat()?;
    let rho = fit.rho_hat(&sigma2);
    check_rho(&fit.eval_grid, &rho)?;
    let scaled: Vec<WindowWeights> = fit
        .weights
        .iter()
        .map(|l| WindowWeights {
            start: l.start,
            values: l
                .values
                .iter()
                .zip(&sigma2[l.start..])
                .map(|(v, s)| v * s.sqrt())
                .collect(),
        })
        .collect();
    let n = fit.w_sorted.len();
    let sups = bootstrap_sup(&rho, draws, streams, |rng, out| {
        let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for (g, l) in out.iter_mut().zip(&scaled) {
            *g = apply(l, &xi);
        }
    });
    Ok((rho, sups))
}

pub fn band_localpoly(fit: &LocalPolyFit, tau: f64, bootstrap_draws: usize, seed: u64) -> Result<BandResult> {
    check_band_args(tau, bootstrap_draws)?;
    let streams = Streams::new(seed, tag::BAND);
    let (rho, sups) = localpoly_sup_draws(fit, bootstrap_draws, &streams)?;
    Ok(assemble_band(fit.eval_grid.clone(), fit.mu_hat.clone(), rho, &sups, tau))
}
