//! Explicit coupling-error bounds for approximate martingales and Monte-Carlo
//! estimates of their moment ingredients.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{lp_norm, phi_p, standard_normal_vector, symmetric_spectral_norm, PNorm, PsdMatrix};
use crate::numeric::mean_se;
use crate::rng::Streams;

/// Tail budget `η ↦ P(‖U‖_p > η/6)`.
pub type TailFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar ingredients of the coupling bounds.
#[derive(Clone, Serialize, Deserialize)]
pub struct MomentInputs {
    pub beta_p2: f64,
    pub beta_p3: Option<f64>,
    pub pi3: f64,
    /// `E‖Ω‖₂`.
    pub omega_mean_norm: f64,
    /// Mixingale constant; zero for exact martingales.
    pub zeta: f64,
    pub d: usize,
    pub p: PNorm,
    /// Overrides the Markov default `ζ/η` when present.
    #[serde(skip)]
    pub u_tail: Option<TailFn>,
}

impl fmt::Debug for MomentInputs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentInputs")
            .field("beta_p2", &self.beta_p2)
            .field("beta_p3", &self.beta_p3)
            .field("pi3", &self.pi3)
            .field("omega_mean_norm", &self.omega_mean_norm)
            .field("zeta", &self.zeta)
            .field("d", &self.d)
            .field("p", &self.p)
            .field("u_tail", &self.u_tail.as_ref().map(|_| "custom"))
            .finish()
    }
}

impl MomentInputs {
    /// All moments zero.
    pub fn new(d: usize, p: PNorm) -> Self {
        Self {
            beta_p2: 0.0,
            beta_p3: None,
            pi3: 0.0,
            omega_mean_norm: 0.0,
            zeta: 0.0,
            d,
            p,
            u_tail: None,
        }
    }

    pub fn with_beta2(mut self, beta: f64) -> Self {
        self.beta_p2 = beta;
        self
    }

    pub fn with_beta3(mut self, beta: f64) -> Self {
        self.beta_p3 = Some(beta);
        self
    }

    pub fn with_pi3(mut self, pi3: f64) -> Self {
        self.pi3 = pi3;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega_mean_norm = omega;
        self
    }

    pub fn with_zeta(mut self, zeta: f64) -> Self {
        self.zeta = zeta;
        self
    }

    pub fn with_tail(mut self, tail: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.u_tail = Some(Arc::new(tail));
        self
    }

    /// Sets `π₃ = 0`, for data whose increments are conditionally symmetric.
    /// Estimated third moments are only an unconditional proxy, so exact
    /// zero has to come from the model.
    pub fn with_symmetric_increments(mut self) -> Self {
        self.pi3 = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("d", "dimension must be positive"));
        }
        let checks: [(&'static str, f64); 5] = [
            ("beta_p2", self.beta_p2),
            ("beta_p3", self.beta_p3.unwrap_or(0.0)),
            ("pi3", self.pi3),
            ("omega_mean_norm", self.omega_mean_norm),
            ("zeta", self.zeta),
        ];
        for (name, v) in checks {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("need a finite nonnegative value, got {v}")));
            }
        }
        Ok(())
    }

    pub fn phi(&self) -> f64 {
        phi_p(self.p, self.d)
    }

    /// `P(‖U‖_p > x/6)`: the custom budget if set, else `ζ/x`.
    pub fn tail(&self, x: f64) -> f64 {
        match &self.u_tail {
            Some(f) => f(x),
            None if self.zeta == 0.0 => 0.0,
            None => self.zeta / x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundOrder {
    #[serde(rename = "2")]
    Second,
    #[serde(rename = "3")]
    Third,
}

impl BoundOrder {
    pub fn from_int(k: u32) -> Result<Self> {
        match k {
            2 => Ok(BoundOrder::Second),
            3 => Ok(BoundOrder::Third),
            _ => Err(Error::invalid("order", format!("must be 2 or 3, got {k}"))),
        }
    }

    pub fn as_int(self) -> u32 {
        match self {
            BoundOrder::Second => 2,
            BoundOrder::Third => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub beta: f64,
    pub omega: f64,
    pub tail: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.beta + self.omega + self.tail
    }
}

/// A probability bound on `‖S − T‖_p > η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingBound {
    pub eta: f64,
    /// Sum of the terms; may exceed 1.
    pub probability_bound: f64,
    pub probability_bound_clamped: f64,
    #[serde(with = "order_as_int")]
    pub order: BoundOrder,
    pub terms: BoundTerms,
    /// `R_n = 1/target` when the bound came from [`optimize_bound`].
    pub rate_inflation: Option<f64>,
}

mod order_as_int {
    use super::BoundOrder;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(o: &BoundOrder, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u32(o.as_int())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BoundOrder, D::Error> {
        BoundOrder::from_int(u32::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl CouplingBound {
    fn from_terms(eta: f64, order: BoundOrder, terms: BoundTerms) -> Self {
        let raw = terms.total();
        Self {
            eta,
            probability_bound: raw,
            probability_bound_clamped: raw.clamp(0.0, 1.0),
            order,
            terms,
            rate_inflation: None,
        }
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("need a finite positive value, got {v}")))
    }
}

/// Bound on `P(‖S − T‖_p > 6η)` at explicit `t` and `M = ν²I`, before any
/// optimisation over the free parameters.
pub fn general_bound(m: &MomentInputs, eta: f64, t: f64, nu: f64) -> Result<f64> {
    m.validate()?;
    check_positive("eta", eta)?;
    check_positive("t", t)?;
    check_positive("nu", nu)?;
    let phi = m.phi();
    let second = m.beta_p2 * t * t / eta.powi(3);
    let branch = match m.beta_p3 {
        Some(b3) => second.min(b3 * t.powi(3) / eta.powi(4) + m.pi3 * t.powi(3) / eta.powi(3)),
        None => second,
    };
    let omega = m.omega_mean_norm;
    let omega_term = if omega == 0.0 { 0.0 } else { 2.0 * omega / (nu * nu) };
    Ok(2.0 * phi / t
        + branch
        + omega_term
        + 2.0 * phi * nu / eta
        + phi * omega.sqrt() / eta
        + m.tail(6.0 * eta))
}

/// The `(t, ν)` plugged into [`general_bound`] at `η/6` to obtain
/// [`simplified_bound`] at `η`.
pub fn plug_in_parameters(m: &MomentInputs, eta: f64, order: BoundOrder) -> (f64, f64) {
    let phi = m.phi();
    let inner = eta / 6.0;
    let t = match order {
        BoundOrder::Second => (2.0 * phi / m.beta_p2).cbrt() * inner,
        BoundOrder::Third => (2.0 * phi / m.beta_p3.unwrap_or(0.0)).powf(0.25) * inner,
    };
    let nu = (m.omega_mean_norm / phi).cbrt() * inner.cbrt();
    (t, nu)
}

fn simplified_terms(m: &MomentInputs, eta: f64, order: BoundOrder, tail: f64) -> BoundTerms {
    let phi = m.phi();
    let beta = match order {
        BoundOrder::Second => 24.0 * (m.beta_p2 * phi * phi / eta.powi(3)).cbrt(),
        BoundOrder::Third => {
            24.0 * (m.beta_p3.unwrap_or(0.0) * phi.powi(3) / eta.powi(4)).powf(0.25)
        }
    };
    let omega = 17.0 * (m.omega_mean_norm * phi * phi / (eta * eta)).cbrt();
    BoundTerms { beta, omega, tail }
}

fn check_order(m: &MomentInputs, order: BoundOrder) -> Result<()> {
    if order == BoundOrder::Third {
        if m.pi3 > 0.0 {
            return Err(Error::contract(
                "pi3",
                format!("order 3 requires pi3 = 0, got {}", m.pi3),
            ));
        }
        if m.beta_p3.is_none() {
            return Err(Error::contract("beta_p3", "order 3 requires beta_p3"));
        }
    }
    Ok(())
}

/// Bound on `P(‖S − T‖_p > η)` with the proposition's plug-in `t` and `ν`.
pub fn simplified_bound(m: &MomentInputs, eta: f64, order: BoundOrder) -> Result<CouplingBound> {
    m.validate()?;
    check_positive("eta", eta)?;
    check_order(m, order)?;
    let terms = simplified_terms(m, eta, order, m.tail(eta));
    Ok(CouplingBound::from_terms(eta, order, terms))
}

pub const ETA_MIN: f64 = 1e-12;
pub const ETA_MAX: f64 = 1e18;

/// Smallest η (to 1e-10 relative) whose simplified bound is at most `target`.
pub fn optimize_bound(m: &MomentInputs, target: f64, order: BoundOrder) -> Result<CouplingBound> {
    optimize_with(m, target, order, |eta| Ok(simplified_bound(m, eta, order)?))
}

fn optimize_with(
    m: &MomentInputs,
    target: f64,
    order: BoundOrder,
    eval: impl Fn(f64) -> Result<CouplingBound>,
) -> Result<CouplingBound> {
    m.validate()?;
    check_order(m, order)?;
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid("target", format!("need target in (0, 1), got {target}")));
    }
    let finish = |mut b: CouplingBound| {
        b.rate_inflation = Some(1.0 / target);
        b
    };
    let low = eval(ETA_MIN)?;
    if low.probability_bound <= target {
        return Ok(finish(low));
    }
    let high = eval(ETA_MAX)?;
    if high.probability_bound > target {
        return Err(Error::Unattainable {
            target,
            eta_max: ETA_MAX,
        });
    }
    let (mut lo, mut hi) = (ETA_MIN, ETA_MAX);
    let mut best = high;
    for _ in 0..200 {
        if hi / lo - 1.0 <= 1e-10 {
            break;
        }
        let mid = (lo * hi).sqrt();
        let b = eval(mid)?;
        if b.probability_bound <= target {
            hi = mid;
            best = b;
        } else {
            lo = mid;
        }
    }
    Ok(finish(best))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorollaryKind {
    Mixingale,
    Martingale,
    Independent,
}

impl std::str::FromStr for CorollaryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixingale" => Ok(CorollaryKind::Mixingale),
            "martingale" => Ok(CorollaryKind::Martingale),
            "independent" => Ok(CorollaryKind::Independent),
            _ => Err(Error::invalid(
                "kind",
                format!("expected mixingale, martingale or independent, got `{s}`"),
            )),
        }
    }
}

fn check_corollary(kind: CorollaryKind, m: &MomentInputs) -> Result<()> {
    if kind != CorollaryKind::Mixingale {
        if m.zeta != 0.0 {
            return Err(Error::contract("zeta", "martingale corollaries need zeta = 0"));
        }
        if m.u_tail.is_some() {
            return Err(Error::contract("u_tail", "martingale corollaries have no U term"));
        }
    }
    if kind == CorollaryKind::Independent && m.omega_mean_norm != 0.0 {
        return Err(Error::contract(
            "omega_mean_norm",
            "independent corollary needs omega_mean_norm = 0",
        ));
    }
    Ok(())
}

/// The mixingale / martingale / independence specialisations.
pub fn corollary_bound(
    kind: CorollaryKind,
    m: &MomentInputs,
    eta: f64,
    order: BoundOrder,
) -> Result<CouplingBound> {
    m.validate()?;
    check_positive("eta", eta)?;
    check_order(m, order)?;
    check_corollary(kind, m)?;
    let tail = match kind {
        CorollaryKind::Mixingale => m.zeta / eta,
        _ => 0.0,
    };
    let mut terms = simplified_terms(m, eta, order, tail);
    if kind == CorollaryKind::Independent {
        terms.omega = 0.0;
    }
    Ok(CouplingBound::from_terms(eta, order, terms))
}

/// [`optimize_bound`] for a corollary's bound.
pub fn optimize_corollary(
    kind: CorollaryKind,
    m: &MomentInputs,
    target: f64,
    order: BoundOrder,
) -> Result<CouplingBound> {
    check_corollary(kind, m)?;
    optimize_with(m, target, order, |eta| corollary_bound(kind, m, eta, order))
}

/// One realisation of increments `X_i` (rows) with conditional variances `V_i`
/// and a target `Σ`.
#[derive(Debug, Clone)]
pub struct MartingalePath {
    pub increments: DMatrix<f64>,
    pub cond_variances: Vec<PsdMatrix>,
    pub sigma: PsdMatrix,
}

impl MartingalePath {
    pub fn new(
        increments: DMatrix<f64>,
        cond_variances: Vec<PsdMatrix>,
        sigma: PsdMatrix,
    ) -> Result<Self> {
        let (n, d) = increments.shape();
        if cond_variances.len() != n {
            return Err(Error::invalid(
                "cond_variances",
                format!("{} variances for {n} increments", cond_variances.len()),
            ));
        }
        if cond_variances.iter().any(|v| v.dim() != d) || sigma.dim() != d {
            return Err(Error::invalid("cond_variances", "dimension mismatch"));
        }
        Ok(Self {
            increments,
            cond_variances,
            sigma,
        })
    }

    /// Path with `Σ = Σ_i V_i`, so that `Ω = 0`.
    pub fn with_quadratic_variation(
        increments: DMatrix<f64>,
        cond_variances: Vec<PsdMatrix>,
    ) -> Result<Self> {
        let d = increments.ncols();
        let sigma = PsdMatrix::new(quadratic_variation(&cond_variances, d))?;
        Self::new(increments, cond_variances, sigma)
    }

    pub fn len(&self) -> usize {
        self.increments.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.increments.ncols()
    }

    /// `S = Σ_i X_i`.
    pub fn sum(&self) -> DVector<f64> {
        self.increments.row_sum().transpose()
    }

    /// `Ω = Σ_i V_i − Σ`.
    pub fn omega(&self) -> DMatrix<f64> {
        quadratic_variation(&self.cond_variances, self.dim()) - self.sigma.matrix()
    }

    /// Copy with `X ↦ cX`, `V_i ↦ c²V_i`, `Σ ↦ c²Σ`.
    pub fn scaled(&self, c: f64) -> MartingalePath {
        let c2 = c * c;
        MartingalePath {
            increments: &self.increments * c,
            cond_variances: self.cond_variances.iter().map(|v| v.scaled(c2)).collect(),
            sigma: self.sigma.scaled(c2),
        }
    }
}

fn quadratic_variation(vs: &[PsdMatrix], d: usize) -> DMatrix<f64> {
    vs.iter().fold(DMatrix::zeros(d, d), |acc, v| acc + v.matrix())
}

/// Monte-Carlo moment estimates with their standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub inputs: MomentInputs,
    pub beta_p2_se: f64,
    pub beta_p3_se: f64,
    /// Sum over steps and multi-indices of the standard errors of the
    /// per-step third-moment means; the scale of `pi3`'s noise floor.
    pub pi3_se: f64,
    pub omega_se: f64,
    pub replicates: usize,
}

/// Multi-indices `κ` with `|κ| = 3`, as sorted coordinate triples.
fn third_order_indices(d: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in 0..d {
        for b in a..d {
            for c in b..d {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Estimates `β_{p,2}`, `β_{p,3}`, the unconditional `π₃` proxy and `E‖Ω‖₂`
/// from independent replicates of the same process. Replicate `r` draws its
/// Gaussian comparison vectors from `streams.rng(r)`.
pub fn estimate_moments(paths: &[MartingalePath], p: PNorm, streams: &Streams) -> Result<MomentEstimate> {
    if paths.len() < 2 {
        return Err(Error::invalid("paths", "need at least 2 replicates"));
    }
    let (n, d) = paths[0].increments.shape();
    if paths.iter().any(|x| x.increments.shape() != (n, d)) {
        return Err(Error::invalid("paths", "replicates differ in shape"));
    }
    let kappas = third_order_indices(d);

    struct PerReplicate {
        beta2: f64,
        beta3: f64,
        omega: f64,
        cubes: Vec<f64>,
    }

    let per: Vec<PerReplicate> = paths
        .par_iter()
        .enumerate()
        .map(|(r, path)| {
            let mut rng = streams.rng(r as u64);
            let (mut beta2, mut beta3) = (0.0, 0.0);
            let mut cubes = Vec::with_capacity(n * kappas.len());
            for i in 0..n {
                let x: Vec<f64> = path.increments.row(i).iter().copied().collect();
                let z = standard_normal_vector(d, &mut rng);
                let g = path.cond_variances[i].sqrt_matrix() * z;
                for v in [&x[..], g.as_slice()] {
                    let two = lp_norm(v, PNorm::TWO);
                    let pn = lp_norm(v, p);
                    beta2 += two * two * pn;
                    beta3 += two * two * two * pn;
                }
                cubes.extend(kappas.iter().map(|k| x[k[0]] * x[k[1]] * x[k[2]]));
            }
            PerReplicate {
                beta2,
                beta3,
                omega: symmetric_spectral_norm(&path.omega()),
                cubes,
            }
        })
        .collect();

    let column = |f: &dyn Fn(&PerReplicate) -> f64| -> (f64, f64) {
        mean_se(&per.iter().map(f).collect::<Vec<_>>())
    };
    let (beta2, beta2_se) = column(&|r| r.beta2);
    let (beta3, beta3_se) = column(&|r| r.beta3);
    let (omega, omega_se) = column(&|r| r.omega);

    let (mut pi3, mut pi3_se) = (0.0, 0.0);
    let mut buf = vec![0.0; per.len()];
    for j in 0..n * kappas.len() {
        for (b, r) in buf.iter_mut().zip(&per) {
            *b = r.cubes[j];
        }
        let (m, se) = mean_se(&buf);
        pi3 += m.abs();
        pi3_se += se;
    }

    Ok(MomentEstimate {
        inputs: MomentInputs {
            beta_p2: beta2,
            beta_p3: Some(beta3),
            pi3,
            omega_mean_norm: omega,
            zeta: 0.0,
            d,
            p,
            u_tail: None,
        },
        beta_p2_se: beta2_se,
        beta_p3_se: beta3_se,
        pi3_se,
        omega_se,
        replicates: paths.len(),
    })
}
