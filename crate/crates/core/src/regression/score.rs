//! The series score `S = Σ_i p(W_i) ε_i` as a martingale, for feeding the
//! coupling bounds.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::series::PartitionBasis;
use crate::coupling::{BoundOrder, MartingalePath};
use crate::dgp::{simulate_regression_with, RegressionDgpSpec};
use crate::error::{Error, Result};
use crate::gaussian::PsdMatrix;
use crate::rng::{tag, Streams};

/// Order-3 couplings need `E[ε_i³ | past] = 0`; symmetric noise gives it.
pub fn coupling_order(dgp: &RegressionDgpSpec) -> BoundOrder {
    if dgp.third_moment_zero() {
        BoundOrder::Third
    } else {
        BoundOrder::Second
    }
}

/// `n E[p(W) p(W)ᵀ σ²(W)]` for uniform `W`, by the midpoint rule on each cell.
pub fn score_variance(dgp: &RegressionDgpSpec, basis: PartitionBasis) -> Result<PsdMatrix> {
    const NODES: usize = 2000;
    let k = basis.k();
    let per = basis.per_cell();
    let mut m = DMatrix::zeros(k, k);
    let width = 1.0 / basis.k_cells as f64;
    for c in 0..basis.k_cells {
        for j in 0..NODES {
            let w = (c as f64 + (j as f64 + 0.5) / NODES as f64) * width;
            let (cell, v) = basis.local(w);
            let s2 = dgp.sigma_fn.eval(w).powi(2);
            for a in 0..per {
                for b in 0..per {
                    m[(cell * per + a, cell * per + b)] += v[a] * v[b] * s2;
                }
            }
        }
    }
    m *= dgp.n as f64 / (NODES * basis.k_cells) as f64;
    PsdMatrix::new(m)
}

/// Replicated score paths with `X_i = p(W_i)(Y_i − μ(W_i))`,
/// `V_i = p(W_i) p(W_i)ᵀ σ²(W_i)` (the regressor is known one step ahead) and
/// `Σ = n E[V_i]`. Replicate `r` uses `Streams::new(seed, REGRESSION).rng(r)`.
pub fn series_score_paths(
    dgp: &RegressionDgpSpec,
    basis: PartitionBasis,
    replicates: usize,
    seed: u64,
) -> Result<Vec<MartingalePath>> {
    if replicates == 0 {
        return Err(Error::invalid("replicates", "need at least one replicate"));
    }
    dgp.validate()?;
    let sigma = score_variance(dgp, basis)?;
    let streams = Streams::new(seed, tag::REGRESSION);
    let k = basis.k();
    let per = basis.per_cell();
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let data = simulate_regression_with(dgp, &mut streams.rng(r))?;
            let n = data.len();
            let mut x = DMatrix::zeros(n, k);
            let mut vs = Vec::with_capacity(n);
            for (i, (&w, &y)) in data.w.iter().zip(&data.y).enumerate() {
                let (c, v) = basis.local(w);
                let e = y - dgp.mu.eval(w);
                let s2 = dgp.sigma_fn.eval(w).powi(2);
                let mut vi = DMatrix::zeros(k, k);
                for a in 0..per {
                    x[(i, c * per + a)] = v[a] * e;
                    for b in 0..per {
                        vi[(c * per + a, c * per + b)] = v[a] * v[b] * s2;
                    }
                }
                vs.push(PsdMatrix::new(vi)?);
            }
            MartingalePath::new(x, vs, sigma.clone())
        })
        .collect()
}
