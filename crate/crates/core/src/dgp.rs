//! Simulators: factor-model martingale paths in three dependence regimes and
//! regression datasets with α-mixing regressors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::MartingalePath;
use crate::error::{Error, Result};
use crate::gaussian::{operator_norm, PNorm, PsdMatrix};
use crate::numeric::normal_cdf;
use crate::rng::{tag, Streams};

/// Unit-variance centered noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    Gaussian,
    Rademacher,
    /// `Exp(1) − 1`, third moment 2.
    SkewedExponential,
}

impl NoiseLaw {
    /// Symmetric about zero, so every odd conditional moment vanishes.
    pub fn symmetric_noise(&self) -> bool {
        !matches!(self, NoiseLaw::SkewedExponential)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseLaw::Gaussian => rng.sample(StandardNormal),
            NoiseLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            NoiseLaw::SkewedExponential => {
                let e: f64 = Exp1.sample(rng);
                e - 1.0
            }
        }
    }
}

impl std::str::FromStr for NoiseLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseLaw::Gaussian),
            "rademacher" => Ok(NoiseLaw::Rademacher),
            "skewed_exponential" | "skewed" => Ok(NoiseLaw::SkewedExponential),
            _ => Err(Error::spec("noise", format!("unknown noise law `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorRegime {
    /// iid factors.
    Independent,
    /// ARCH(1) factors `f_ij = σ_f s_ij u_ij` with
    /// `s_ij² = (1 − θ) + θ (f_{i−1,j}/σ_f)²`; a martingale difference
    /// sequence with random conditional variance.
    Martingale { theta: f64 },
    /// `f_i = A f_{i−1} + σ_f u_i`, `f_0 = 0`.
    ArMixingale,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadingLaw {
    Fixed(DMatrix<f64>),
    /// Entries iid `N(0, 1/m)`, drawn once per replicate.
    RandomGaussian,
}

/// `X_i = L f_i + ε_i` with `f_i ∈ R^m`, `ε_i ∈ R^d`.
#[derive(Debug, Clone)]
pub struct FactorModelSpec {
    pub d: usize,
    pub m: usize,
    pub regime: FactorRegime,
    pub loading_law: LoadingLaw,
    pub factor_noise_scale: f64,
    pub idiosyncratic_scale: f64,
    pub ar_matrix: Option<DMatrix<f64>>,
    pub noise: NoiseLaw,
    /// Norm in which the AR matrix must contract.
    pub p: PNorm,
}

impl FactorModelSpec {
    pub fn new(d: usize, m: usize, regime: FactorRegime) -> Self {
        Self {
            d,
            m,
            regime,
            loading_law: LoadingLaw::RandomGaussian,
            factor_noise_scale: 1.0,
            idiosyncratic_scale: 1.0,
            ar_matrix: None,
            noise: NoiseLaw::Gaussian,
            p: PNorm::INF,
        }
    }

    pub fn symmetric_noise(&self) -> bool {
        self.noise.symmetric_noise()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 {
            return Err(Error::spec("d", "dimensions must be positive"));
        }
        for (name, v) in [
            ("factor_noise_scale", self.factor_noise_scale),
            ("idiosyncratic_scale", self.idiosyncratic_scale),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::spec(name, format!("need a finite nonnegative scale, got {v}")));
            }
        }
        if let LoadingLaw::Fixed(l) = &self.loading_law {
            if l.shape() != (self.d, self.m) {
                return Err(Error::spec(
                    "loading_law",
                    format!("loading is {:?}, expected ({}, {})", l.shape(), self.d, self.m),
                ));
            }
        }
        match self.regime {
            FactorRegime::Martingale { theta } if !(0.0..1.0).contains(&theta) => {
                return Err(Error::spec("theta", format!("need theta in [0, 1), got {theta}")));
            }
            FactorRegime::ArMixingale => {
                self.ar_norm()?;
            }
            _ => {}
        }
        Ok(())
    }

    /// `‖A‖_p`, which must be below one.
    pub fn ar_norm(&self) -> Result<f64> {
        let a = self
            .ar_matrix
            .as_ref()
            .ok_or_else(|| Error::spec("ar_matrix", "required for the ar_mixingale regime"))?;
        if a.shape() != (self.m, self.m) {
            return Err(Error::spec("ar_matrix", format!("must be {0}x{0}", self.m)));
        }
        let norm = operator_norm(a, self.p);
        if norm >= 1.0 {
            return Err(Error::spec(
                "ar_matrix",
                format!("‖A‖_{} = {norm} is not below 1", self.p),
            ));
        }
        Ok(norm)
    }

    fn loading<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        match &self.loading_law {
            LoadingLaw::Fixed(l) => l.clone(),
            LoadingLaw::RandomGaussian => {
                let s = 1.0 / (self.m as f64).sqrt();
                DMatrix::from_fn(self.d, self.m, |_, _| s * rng.sample::<f64, _>(StandardNormal))
            }
        }
    }
}

/// A loading with iid `N(0, 1/m)` entries drawn from `Streams(seed, FACTOR)`,
/// for experiments that need one fixed `Σ` across replicates.
pub fn draw_loading(d: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = Streams::new(seed, tag::FACTOR).child(0).rng(0);
    let s = 1.0 / (m as f64).max(1.0).sqrt();
    DMatrix::from_fn(d, m, |_, _| s * rng.sample::<f64, _>(StandardNormal))
}

/// `L diag(w) Lᵀ + s² I`.
fn factor_variance(l: &DMatrix<f64>, w: &[f64], s2: f64) -> DMatrix<f64> {
    let mut scaled = l.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= w[j];
    }
    let mut v = scaled * l.transpose();
    for k in 0..v.nrows() {
        v[(k, k)] += s2;
    }
    v
}

fn simulate_one<R: Rng + ?Sized>(spec: &FactorModelSpec, n: usize, rng: &mut R) -> Result<MartingalePath> {
    let (d, m) = (spec.d, spec.m);
    let l = spec.loading(rng);
    let sf = spec.factor_noise_scale;
    let se = spec.idiosyncratic_scale;
    let se2 = se * se;
    let mut x = DMatrix::zeros(n, d);
    let mut vs = Vec::with_capacity(n);

    match spec.regime {
        FactorRegime::Independent | FactorRegime::ArMixingale => {
            let v = PsdMatrix::new(factor_variance(&l, &vec![sf * sf; m], se2))?;
            let a = spec.ar_matrix.clone();
            let mut f = DVector::zeros(m);
            for i in 0..n {
                let u = DVector::from_fn(m, |_, _| spec.noise.draw(rng));
                f = match (&spec.regime, &a) {
                    (FactorRegime::ArMixingale, Some(a)) => a * &f + u * sf,
                    _ => u * sf,
                };
                let xi = &l * &f + DVector::from_fn(d, |_, _| se * spec.noise.draw(rng));
                x.set_row(i, &xi.transpose());
                vs.push(v.clone());
            }
            let sigma = v.scaled(n as f64);
            MartingalePath::new(x, vs, sigma)
        }
        FactorRegime::Martingale { theta } => {
            // standardized previous factor f_{i-1}/σ_f; f_0 = 0
            let mut prev = vec![0.0; m];
            let mut expected = 0.0;
            let mut expected_sum = 0.0;
            for i in 0..n {
                let s2: Vec<f64> = prev.iter().map(|z| (1.0 - theta) + theta * z * z).collect();
                expected = (1.0 - theta) + theta * expected;
                expected_sum += expected;
                let mut f = DVector::zeros(m);
                for j in 0..m {
                    let z = s2[j].sqrt() * spec.noise.draw(rng);
                    prev[j] = z;
                    f[j] = sf * z;
                }
                let xi = &l * &f + DVector::from_fn(d, |_, _| se * spec.noise.draw(rng));
                x.set_row(i, &xi.transpose());
                let w: Vec<f64> = s2.iter().map(|s| sf * sf * s).collect();
                vs.push(PsdMatrix::new(factor_variance(&l, &w, se2))?);
            }
            let sigma = PsdMatrix::new(factor_variance(
                &l,
                &vec![sf * sf * expected_sum; m],
                n as f64 * se2,
            ))?;
            MartingalePath::new(x, vs, sigma)
        }
    }
}

/// `replicates` independent paths of length `n`. The loading is drawn once
/// per replicate. `Σ` is `Σ_i E[V_i | L]` for the martingale regimes and
/// `Σ_i V_i` for the AR regime.
pub fn simulate_factor(
    spec: &FactorModelSpec,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<MartingalePath>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("n", "need at least one step"));
    }
    let streams = Streams::new(seed, tag::FACTOR);
    (0..replicates)
        .into_par_iter()
        .map(|r| simulate_one(spec, n, &mut streams.rng(r as u64)))
        .collect()
}

/// `ζ = 6 Σ_{i=1}^n c ‖A‖_p^i` for the AR regime, whose forward coefficients
/// vanish.
pub fn mixingale_zeta(spec: &FactorModelSpec, n: usize, p: PNorm, c_bound: f64) -> Result<f64> {
    if spec.regime != FactorRegime::ArMixingale {
        return Err(Error::spec("regime", "mixingale_zeta needs the ar_mixingale regime"));
    }
    if !(c_bound >= 0.0) || !c_bound.is_finite() {
        return Err(Error::invalid("c_bound", format!("need a finite nonnegative value, got {c_bound}")));
    }
    let with_p = FactorModelSpec {
        p,
        ..spec.clone()
    };
    let a = with_p.ar_norm()?;
    let mut power = 1.0;
    let mut sum = 0.0;
    for _ in 0..n {
        power *= a;
        sum += power;
    }
    Ok(6.0 * c_bound * sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuFn {
    /// `sin(2πw)`.
    Sin2Pi,
    /// `8(w − ½)³ + (w − ½)`.
    Poly3,
    Constant(f64),
}

impl MuFn {
    pub fn eval(&self, w: f64) -> f64 {
        match *self {
            MuFn::Sin2Pi => (2.0 * std::f64::consts::PI * w).sin(),
            MuFn::Poly3 => {
                let c = w - 0.5;
                8.0 * c * c * c + c
            }
            MuFn::Constant(c) => c,
        }
    }
}

impl std::str::FromStr for MuFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sin2pi" => Ok(MuFn::Sin2Pi),
            "poly3" => Ok(MuFn::Poly3),
            "constant" => Ok(MuFn::Constant(0.0)),
            other => match other.strip_prefix("constant:").map(str::parse::<f64>) {
                Some(Ok(c)) => Ok(MuFn::Constant(c)),
                _ => Err(Error::spec("mu", format!("unknown regression function `{s}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaFn {
    Constant(f64),
    /// `s (½ + exp(−50 (w − ½)²))`.
    Bump(f64),
}

impl SigmaFn {
    pub fn eval(&self, w: f64) -> f64 {
        match *self {
            SigmaFn::Constant(s) => s,
            SigmaFn::Bump(s) => s * (0.5 + (-50.0 * (w - 0.5).powi(2)).exp()),
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            SigmaFn::Constant(s) | SigmaFn::Bump(s) => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WDependence {
    IidUniform,
    /// `W_i = Φ(z_i)` with `z` a stationary Gaussian AR(1).
    ArCopula(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionDgpSpec {
    pub n: usize,
    pub mu: MuFn,
    pub sigma_fn: SigmaFn,
    pub w_dependence: WDependence,
    pub noise: NoiseLaw,
}

impl RegressionDgpSpec {
    pub fn new(n: usize, mu: MuFn, sigma_fn: SigmaFn) -> Self {
        Self {
            n,
            mu,
            sigma_fn,
            w_dependence: WDependence::IidUniform,
            noise: NoiseLaw::Gaussian,
        }
    }

    /// `E[ε_i³ | past] = 0`, the premise for third-order couplings.
    pub fn third_moment_zero(&self) -> bool {
        self.noise.symmetric_noise()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::spec("n", format!("need n >= 10, got {}", self.n)));
        }
        if let WDependence::ArCopula(rho) = self.w_dependence {
            if !(rho > -1.0 && rho < 1.0) {
                return Err(Error::spec("rho", format!("need rho in (-1, 1), got {rho}")));
            }
        }
        let s = self.sigma_fn.scale();
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::spec("sigma_fn", format!("need a finite nonnegative scale, got {s}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub w: Vec<f64>,
    pub y: Vec<f64>,
}

impl RegressionData {
    pub fn new(w: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if w.len() != y.len() {
            return Err(Error::invalid("y", "W and Y lengths differ"));
        }
        if w.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("data", "non-finite value"));
        }
        Ok(Self { w, y })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

pub fn simulate_regression_with<R: Rng + ?Sized>(
    spec: &RegressionDgpSpec,
    rng: &mut R,
) -> Result<RegressionData> {
    spec.validate()?;
    let n = spec.n;
    let w: Vec<f64> = match spec.w_dependence {
        WDependence::IidUniform => (0..n).map(|_| rng.random::<f64>()).collect(),
        WDependence::ArCopula(rho) => {
            let innov = (1.0 - rho * rho).sqrt();
            let mut z: f64 = rng.sample(StandardNormal);
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                if i > 0 {
                    z = rho * z + innov * rng.sample::<f64, _>(StandardNormal);
                }
                out.push(normal_cdf(z));
            }
            out
        }
    };
    let y = w
        .iter()
        .map(|&wi| spec.mu.eval(wi) + spec.sigma_fn.eval(wi) * spec.noise.draw(rng))
        .collect();
    Ok(RegressionData { w, y })
}

pub fn simulate_regression(spec: &RegressionDgpSpec, seed: u64) -> Result<RegressionData> {
    simulate_regression_with(spec, &mut Streams::new(seed, tag::REGRESSION).rng(0))
}
