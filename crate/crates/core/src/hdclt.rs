//! Central limit bounds over set classes, their bootstrap versions, and
//! Monte Carlo Kolmogorov–Smirnov distances to check them against.
//!
//! The convex and ℓᵖ-ball anti-concentration terms are only known up to
//! universal constants; they are evaluated with constant 1 and reports mark
//! them as `"order"`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::coupling::{estimate_moments, MartingalePath, MomentEstimate, MomentInputs};
use crate::error::{Error, Result};
use crate::gaussian::{
    gaussian_gaussian_tail_from_norm, lp_norm, phi_p, sqrt_difference_norm, standard_normal_vector,
    symmetric_spectral_norm, PNorm, PsdMatrix,
};
use crate::numeric::{ecdf_quantile, logspace, normal_quantile, sort_floats};
use crate::rng::{tag, Streams};

/// Draws per substream in the Gaussian Monte Carlo loops.
const CHUNK: usize = 1024;

/// Default draws for `Var‖T‖_p`.
pub const VARIANCE_DRAWS: usize = 100_000;

/// Thresholds per coordinate for the rectangle Kolmogorov–Smirnov surrogate.
pub const RECT_LEVELS: usize = 199;

/// 400 log-spaced points on `[1e-6, 1e6]`.
pub fn default_eta_grid() -> Vec<f64> {
    logspace(1e-6, 1e6, 400)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SetClass {
    Convex,
    Rectangles,
    LpBalls(PNorm),
}

impl SetClass {
    /// Norm in which the perimetric term is known.
    pub fn native_norm(&self) -> PNorm {
        match *self {
            SetClass::Convex => PNorm::TWO,
            SetClass::Rectangles => PNorm::INF,
            SetClass::LpBalls(p) => p,
        }
    }

    pub fn constants(&self) -> &'static str {
        match self {
            SetClass::Rectangles => "explicit",
            _ => "order",
        }
    }
}

impl fmt::Display for SetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetClass::Convex => f.write_str("convex"),
            SetClass::Rectangles => f.write_str("rectangles"),
            SetClass::LpBalls(p) => write!(f, "lp_balls({p})"),
        }
    }
}

fn parse_lp_balls(s: &str) -> Option<Result<PNorm>> {
    let rest = s.strip_prefix("lp_balls")?;
    let inner = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .or_else(|| rest.strip_prefix(':'))?;
    Some(inner.parse())
}

impl FromStr for SetClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convex" => Ok(SetClass::Convex),
            "rectangles" => Ok(SetClass::Rectangles),
            _ => match parse_lp_balls(s) {
                Some(p) => Ok(SetClass::LpBalls(p?)),
                None => Err(Error::invalid("class", format!("unknown set class `{s}`"))),
            },
        }
    }
}

impl Serialize for SetClass {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SetClass {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Set classes that `mc_ks` can search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KsClass {
    /// Half-infinite rectangles `(−∞, t]` on a per-coordinate quantile grid.
    RectanglesHalfInfinite,
    LpBalls(PNorm),
}

impl fmt::Display for KsClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KsClass::RectanglesHalfInfinite => f.write_str("rectangles_halfinfinite"),
            KsClass::LpBalls(p) => write!(f, "lp_balls({p})"),
        }
    }
}

impl FromStr for KsClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangles_halfinfinite" | "rectangles" => Ok(KsClass::RectanglesHalfInfinite),
            _ => match parse_lp_balls(s) {
                Some(p) => Ok(KsClass::LpBalls(p?)),
                None => Err(Error::invalid("class", format!("unknown KS class `{s}`"))),
            },
        }
    }
}

impl Serialize for KsClass {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KsClass {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltBoundReport {
    pub set_class: SetClass,
    pub p: PNorm,
    pub eta_star: f64,
    pub gamma_term: f64,
    pub perimetric_term: f64,
    pub bootstrap_term: f64,
    /// Raw sum of the terms at `eta_star`; may exceed 1.
    pub total: f64,
    pub total_clamped: f64,
    /// `"explicit"` or `"order"` (anti-concentration constant set to 1).
    pub constants: String,
    /// `‖Σ̂^{1/2} − Σ^{1/2}‖₂`, bootstrap reports only.
    pub sqrt_difference: Option<f64>,
    /// `‖Σ̂ − Σ‖₂^{1/2}`, an upper bound on `sqrt_difference`.
    pub sqrt_difference_relaxed: Option<f64>,
    /// Bootstrap term at `eta_star` with the relaxed norm.
    pub bootstrap_term_relaxed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsEstimate {
    pub statistic: f64,
    pub mc_draws: usize,
    pub replicates: usize,
    /// `½ √(1/n_S + 1/n_T)`, the worst-case pointwise standard error.
    pub se: f64,
    pub class: KsClass,
}

/// `Γ_p(η) = 24 (β_{p,2} φ²/η³)^{1/3} + 17 (E‖Ω‖₂ φ²/η²)^{1/3}` with
/// `φ = φ_p(d)` taken from `m`.
pub fn gamma_p(m: &MomentInputs, eta: f64) -> Result<f64> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid("eta", format!("need a finite eta > 0, got {eta}")));
    }
    m.validate()?;
    let phi2 = phi_p(m.p, m.d).powi(2);
    Ok(24.0 * (m.beta_p2 * phi2 / eta.powi(3)).cbrt() + 17.0 * (m.omega_mean_norm * phi2 / (eta * eta)).cbrt())
}

/// Smallest `c` with `‖x‖_q ≤ c ‖x‖_p` on `R^d`.
pub fn norm_ratio(d: usize, p: PNorm, q: PNorm) -> f64 {
    let inv = |r: PNorm| match r {
        PNorm::Finite(r) => 1.0 / r,
        PNorm::Infinity => 0.0,
    };
    (d as f64).powf((inv(q) - inv(p)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    /// `Δ = slope · η`.
    Linear(f64),
    /// `Δ = η / √(V + η²)`.
    Variance(f64),
}

/// The perimetric term `Δ_p(A, η)` of a set class for a fixed `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perimetric {
    pub class: SetClass,
    pub d: usize,
    shape: Shape,
}

impl Perimetric {
    /// Precomputes the class constant. The ℓᵖ-ball class estimates
    /// `Var‖T‖_p` from [`VARIANCE_DRAWS`] draws seeded by `seed`.
    pub fn new(class: SetClass, sigma: &PsdMatrix, seed: u64) -> Result<Self> {
        Self::with_draws(class, sigma, seed, VARIANCE_DRAWS)
    }

    pub fn with_draws(class: SetClass, sigma: &PsdMatrix, seed: u64, draws: usize) -> Result<Self> {
        let d = sigma.dim();
        let shape = match class {
            SetClass::Rectangles => {
                let min_var = sigma.min_diagonal();
                if !(min_var > 0.0) {
                    return Err(Error::invalid("sigma", "rectangles need a positive minimum variance"));
                }
                Shape::Linear(((2.0 * (d as f64).ln()).sqrt() + 2.0) / min_var.sqrt())
            }
            SetClass::Convex => {
                let ev = sigma.eigenvalues();
                let max = sigma.max_eigenvalue();
                if ev.iter().any(|&e| !(e > 1e-12 * max)) {
                    return Err(Error::invalid("sigma", "convex class needs an invertible covariance"));
                }
                let frob = ev.iter().map(|e| e.powi(-2)).sum::<f64>().sqrt();
                Shape::Linear(frob.sqrt())
            }
            SetClass::LpBalls(p) => {
                if draws < 2 {
                    return Err(Error::invalid("draws", "need at least 2 draws"));
                }
                let (var, _) = lp_norm_variance(sigma, p, draws, &Streams::new(seed, tag::PERIMETRIC));
                Shape::Variance(var)
            }
        };
        Ok(Self { class, d, shape })
    }

    /// `Δ` in the class's own norm.
    pub fn native(&self, eta: f64) -> f64 {
        match self.shape {
            Shape::Linear(slope) => slope * eta,
            Shape::Variance(v) => {
                if v == 0.0 && eta == 0.0 {
                    return 0.0;
                }
                eta / (v + eta * eta).sqrt()
            }
        }
    }

    /// `Δ_p(A, η) ≤ Δ_q(A, cη)` with `q` the native norm and
    /// `c = sup ‖x‖_q / ‖x‖_p`.
    pub fn delta(&self, p: PNorm, eta: f64) -> f64 {
        self.native(norm_ratio(self.d, p, self.class.native_norm()) * eta)
    }

    /// The estimated `Var‖T‖_p` for the ℓᵖ-ball class.
    pub fn norm_variance(&self) -> Option<f64> {
        match self.shape {
            Shape::Variance(v) => Some(v),
            Shape::Linear(_) => None,
        }
    }
}

/// `Δ` in the class's native norm. Convenience over [`Perimetric`].
pub fn delta_perimetric(class: SetClass, sigma: &PsdMatrix, eta: f64, seed: u64) -> Result<f64> {
    Ok(Perimetric::new(class, sigma, seed)?.native(eta))
}

fn check_grid(eta_grid: &[f64]) -> Result<()> {
    if eta_grid.is_empty() {
        return Err(Error::invalid("eta_grid", "empty grid"));
    }
    if eta_grid.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::invalid("eta_grid", "grid points must be finite and positive"));
    }
    Ok(())
}

fn check_dims(moments: &[MomentInputs], d: usize) -> Result<()> {
    if moments.is_empty() {
        return Err(Error::invalid("moments", "need moment inputs for at least one p"));
    }
    if let Some(m) = moments.iter().find(|m| m.d != d) {
        return Err(Error::invalid("moments", format!("dimension {} does not match sigma ({d})", m.d)));
    }
    Ok(())
}

/// Minimises `Γ_p(η) + Δ_p(A, η)` over the grid and over the supplied
/// moment inputs (one per p).
pub fn clt_bound(moments: &[MomentInputs], perimetric: &Perimetric, eta_grid: &[f64]) -> Result<CltBoundReport> {
    check_grid(eta_grid)?;
    check_dims(moments, perimetric.d)?;
    let mut best: Option<CltBoundReport> = None;
    for m in moments {
        for &eta in eta_grid {
            let gamma = gamma_p(m, eta)?;
            let delta = perimetric.delta(m.p, eta);
            let total = gamma + delta;
            if best.as_ref().is_none_or(|b| total < b.total) {
                best = Some(report(perimetric, m.p, eta, gamma, delta, 0.0));
            }
        }
    }
    Ok(best.expect("nonempty grid"))
}

fn report(perimetric: &Perimetric, p: PNorm, eta: f64, gamma: f64, delta: f64, boot: f64) -> CltBoundReport {
    let total = gamma + delta + boot;
    CltBoundReport {
        set_class: perimetric.class,
        p,
        eta_star: eta,
        gamma_term: gamma,
        perimetric_term: delta,
        bootstrap_term: boot,
        total,
        total_clamped: total.min(1.0),
        constants: perimetric.class.constants().to_string(),
        sqrt_difference: None,
        sqrt_difference_relaxed: None,
        bootstrap_term_relaxed: None,
    }
}

/// `Γ_p(η) + 2Δ_p(A, η) + 2d exp(−η² / (2 d^{2/p} ‖Σ̂^{1/2} − Σ^{1/2}‖₂²))`
/// minimised over the grid, with `p` from `m`.
pub fn bootstrap_bound(
    m: &MomentInputs,
    sigma: &PsdMatrix,
    sigma_hat: &PsdMatrix,
    perimetric: &Perimetric,
    eta_grid: &[f64],
) -> Result<CltBoundReport> {
    check_grid(eta_grid)?;
    check_dims(std::slice::from_ref(m), sigma.dim())?;
    if perimetric.d != sigma.dim() {
        return Err(Error::invalid("perimetric", "dimension does not match sigma"));
    }
    let d = sigma.dim();
    let s = sqrt_difference_norm(sigma_hat, sigma)?;
    let relaxed = symmetric_spectral_norm(&(sigma_hat.matrix() - sigma.matrix())).sqrt();

    let mut best: Option<CltBoundReport> = None;
    for &eta in eta_grid {
        let gamma = gamma_p(m, eta)?;
        let delta = 2.0 * perimetric.delta(m.p, eta);
        let boot = gaussian_gaussian_tail_from_norm(d, m.p, s, eta);
        let total = gamma + delta + boot;
        if best.as_ref().is_none_or(|b| total < b.total) {
            best = Some(report(perimetric, m.p, eta, gamma, delta, boot));
        }
    }
    let mut out = best.expect("nonempty grid");
    out.sqrt_difference = Some(s);
    out.sqrt_difference_relaxed = Some(relaxed);
    out.bootstrap_term_relaxed = Some(gaussian_gaussian_tail_from_norm(d, m.p, relaxed, out.eta_star));
    Ok(out)
}

/// Runs `f` on `draws` vectors `root · Z`. Block `c` of [`CHUNK`] draws uses
/// `streams.rng(c)`; results come back in draw order.
fn gaussian_draws<T, F>(root: &DMatrix<f64>, draws: usize, streams: &Streams, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&DVector<f64>) -> T + Sync,
{
    let d = root.nrows();
    let chunks = draws.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = streams.rng(c as u64);
            let len = CHUNK.min(draws - c * CHUNK);
            let f = &f;
            (0..len)
                .map(|_| f(&(root * standard_normal_vector(d, &mut rng))))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Sample variance of `‖Σ^{1/2} Z‖_p` and its standard error.
pub fn lp_norm_variance(sigma: &PsdMatrix, p: PNorm, draws: usize, streams: &Streams) -> (f64, f64) {
    let norms = gaussian_draws(sigma.sqrt_matrix(), draws, streams, |t| lp_norm(t.as_slice(), p));
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let m2 = norms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = norms.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    (var, ((m4 - m2 * m2) / n).max(0.0).sqrt())
}

/// Sorted draws of `‖Σ̂^{1/2} Z‖_p`.
pub fn lp_norm_draws(sigma_hat: &PsdMatrix, p: PNorm, draws: usize, streams: &Streams) -> Vec<f64> {
    let mut out = gaussian_draws(sigma_hat.sqrt_matrix(), draws, streams, |t| lp_norm(t.as_slice(), p));
    sort_floats(&mut out);
    out
}

/// `q̂_p(τ) = inf{t : P(‖T̂‖_p ≤ t) ≥ τ}` with `T̂ ~ N(0, Σ̂)`, by Monte Carlo.
pub fn lp_quantile_bootstrap(sigma_hat: &PsdMatrix, p: PNorm, tau: f64, draws: usize, seed: u64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("tau", format!("need tau in (0, 1), got {tau}")));
    }
    if draws < 100 {
        return Err(Error::invalid("draws", format!("need at least 100, got {draws}")));
    }
    let sorted = lp_norm_draws(sigma_hat, p, draws, &Streams::new(seed, tag::LP_QUANTILE));
    Ok(ecdf_quantile(&sorted, tau))
}

/// Monte Carlo estimate of `sup_A |P(S ∈ A) − P(T ∈ A)|` with
/// `T ~ N(0, Σ)` from replicated sums `S`.
///
/// Half-infinite rectangles use thresholds `σ_j Φ⁻¹(k/200)`, `k = 1..199`,
/// on each coordinate, searched over the one-coordinate sets
/// `{x_j ≤ t_{j,k}}` and the diagonal sets `{x_j ≤ t_{j,k} ∀j}`. This is a
/// lower bound on the sup over all rectangles.
pub fn mc_ks(
    sums: &[DVector<f64>],
    sigma: &PsdMatrix,
    class: KsClass,
    mc_draws: usize,
    seed: u64,
) -> Result<KsEstimate> {
    if sums.len() < 500 {
        return Err(Error::invalid("replicates", format!("need at least 500, got {}", sums.len())));
    }
    if mc_draws < 500 {
        return Err(Error::invalid("mc_draws", format!("need at least 500, got {mc_draws}")));
    }
    let d = sigma.dim();
    if sums.iter().any(|s| s.len() != d) {
        return Err(Error::invalid("sums", "dimension does not match sigma"));
    }
    let streams = Streams::new(seed, tag::KS);
    let statistic = match class {
        KsClass::RectanglesHalfInfinite => rectangle_ks(sums, sigma, mc_draws, &streams)?,
        KsClass::LpBalls(p) => {
            let mut s: Vec<f64> = sums.iter().map(|x| lp_norm(x.as_slice(), p)).collect();
            sort_floats(&mut s);
            let t = lp_norm_draws(sigma, p, mc_draws, &streams);
            two_sample_ks(&s, &t)
        }
    };
    Ok(KsEstimate {
        statistic,
        mc_draws,
        replicates: sums.len(),
        se: 0.5 * (1.0 / sums.len() as f64 + 1.0 / mc_draws as f64).sqrt(),
        class,
    })
}

/// Monte Carlo distance next to the bound it is supposed to respect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KsExperiment {
    #[serde(flatten)]
    pub ks: KsEstimate,
    pub bound: CltBoundReport,
    pub moments: Vec<MomentEstimate>,
    /// The bound is at least 1 and says nothing.
    pub vacuous: bool,
    /// `vacuous` or `statistic ≤ bound`.
    pub consistent: bool,
}

/// Estimates moments from the replicated paths, evaluates the CLT bound for
/// the matching set class, and compares it with `mc_ks` on the path sums.
/// All paths must share `Σ`.
pub fn ks_experiment(
    paths: &[MartingalePath],
    class: KsClass,
    mc_draws: usize,
    eta_grid: &[f64],
    seed: u64,
) -> Result<KsExperiment> {
    let first = paths.first().ok_or_else(|| Error::invalid("paths", "no replicates"))?;
    let sigma = first.sigma.clone();
    let tol = 1e-12 * sigma.matrix().amax().max(1e-300);
    if paths.iter().any(|p| (p.sigma.matrix() - sigma.matrix()).amax() > tol) {
        return Err(Error::invalid("paths", "replicates must share a nonrandom sigma"));
    }
    let (set, norms) = match class {
        KsClass::RectanglesHalfInfinite => (SetClass::Rectangles, vec![PNorm::INF, PNorm::TWO]),
        KsClass::LpBalls(p) => (SetClass::LpBalls(p), vec![p]),
    };
    let streams = Streams::new(seed, tag::MOMENTS);
    let moments = norms
        .iter()
        .map(|&p| estimate_moments(paths, p, &streams))
        .collect::<Result<Vec<_>>>()?;
    let inputs: Vec<MomentInputs> = moments.iter().map(|m| m.inputs.clone()).collect();
    let perimetric = Perimetric::new(set, &sigma, seed)?;
    let bound = clt_bound(&inputs, &perimetric, eta_grid)?;
    let sums: Vec<DVector<f64>> = paths.iter().map(MartingalePath::sum).collect();
    let ks = mc_ks(&sums, &sigma, class, mc_draws, seed)?;
    let vacuous = bound.total >= 1.0;
    Ok(KsExperiment {
        consistent: vacuous || ks.statistic <= bound.total,
        ks,
        bound,
        moments,
        vacuous,
    })
}

/// `sup_t |F̂(t) − Ĝ(t)|` for two sorted samples.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0f64;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Per-coordinate level indices: `k_j = #{k : t_{j,k} < x_j}`.
struct Levels {
    z: Vec<f64>,
    sd: Vec<f64>,
}

impl Levels {
    fn new(sigma: &PsdMatrix) -> Self {
        let n = RECT_LEVELS + 1;
        Self {
            z: (1..n).map(|k| normal_quantile(k as f64 / n as f64)).collect(),
            sd: (0..sigma.dim()).map(|j| sigma.matrix()[(j, j)].sqrt()).collect(),
        }
    }

    /// Adds `x` to the marginal and diagonal level histograms.
    fn count(&self, x: &DVector<f64>, marginal: &mut [Vec<u64>], diagonal: &mut [u64]) {
        let mut top = 0;
        for (j, (&xj, &s)) in x.iter().zip(&self.sd).enumerate() {
            let k = self.z.partition_point(|&z| z * s < xj);
            marginal[j][k] += 1;
            top = top.max(k);
        }
        diagonal[top] += 1;
    }
}

struct Histograms {
    marginal: Vec<Vec<u64>>,
    diagonal: Vec<u64>,
    total: u64,
}

impl Histograms {
    fn new(d: usize) -> Self {
        Self {
            marginal: vec![vec![0; RECT_LEVELS + 1]; d],
            diagonal: vec![0; RECT_LEVELS + 1],
            total: 0,
        }
    }

    fn merge(mut self, other: Histograms) -> Self {
        for (a, b) in self.marginal.iter_mut().zip(&other.marginal) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.diagonal.iter_mut().zip(&other.diagonal) {
            *x += y;
        }
        self.total += other.total;
        self
    }

    /// CDF values at levels `0..RECT_LEVELS` for every searched rectangle.
    fn cdfs(&self) -> Vec<f64> {
        let n = self.total as f64;
        let mut out = Vec::with_capacity((self.marginal.len() + 1) * RECT_LEVELS);
        for h in self.marginal.iter().chain(std::iter::once(&self.diagonal)) {
            let mut acc = 0;
            for &c in &h[..RECT_LEVELS] {
                acc += c;
                out.push(acc as f64 / n);
            }
        }
        out
    }
}

fn rectangle_ks(sums: &[DVector<f64>], sigma: &PsdMatrix, mc_draws: usize, streams: &Streams) -> Result<f64> {
    if !(sigma.min_diagonal() > 0.0) {
        return Err(Error::invalid("sigma", "rectangles need a positive minimum variance"));
    }
    let d = sigma.dim();
    let levels = Levels::new(sigma);

    let mut s_hist = Histograms::new(d);
    for x in sums {
        levels.count(x, &mut s_hist.marginal, &mut s_hist.diagonal);
        s_hist.total += 1;
    }

    // T = D_σ R^{1/2} Z with R the correlation matrix
    let inv_sd: Vec<f64> = levels.sd.iter().map(|s| 1.0 / s).collect();
    let corr = DMatrix::from_fn(d, d, |a, b| sigma.matrix()[(a, b)] * inv_sd[a] * inv_sd[b]);
    let root = DMatrix::from_diagonal(&DVector::from_vec(levels.sd.clone()))
        * PsdMatrix::new(corr)?.sqrt_matrix();
    let t_hist = (0..mc_draws.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = streams.rng(c as u64);
            let mut h = Histograms::new(d);
            for _ in 0..CHUNK.min(mc_draws - c * CHUNK) {
                let t = &root * standard_normal_vector(d, &mut rng);
                levels.count(&t, &mut h.marginal, &mut h.diagonal);
                h.total += 1;
            }
            h
        })
        .reduce(|| Histograms::new(d), Histograms::merge);

    Ok(s_hist
        .cdfs()
        .iter()
        .zip(t_hist.cdfs())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::normal_cdf;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn gamma_examples() {
        let zero = MomentInputs::new(3, PNorm::INF);
        assert_eq!(gamma_p(&zero, 1.0).unwrap(), 0.0);

        let phi2 = 2.0 * 2f64.ln();
        let beta = MomentInputs::new(1, PNorm::INF).with_beta2(1.0);
        assert!(close(gamma_p(&beta, 100.0).unwrap(), 24.0 * (phi2 / 1e6).cbrt(), 1e-12));

        let omega = MomentInputs::new(1, PNorm::INF).with_omega(1.0);
        assert!(close(gamma_p(&omega, 100.0).unwrap(), 17.0 * (phi2 / 1e4).cbrt(), 1e-12));
        assert!(gamma_p(&omega, 0.0).is_err());
    }

    #[test]
    fn perimetric_examples() {
        let rect = delta_perimetric(SetClass::Rectangles, &PsdMatrix::identity(10), 0.1, 0).unwrap();
        assert!(close(rect, 0.1 * ((2.0 * 10f64.ln()).sqrt() + 2.0), 1e-12));
        let convex = delta_perimetric(SetClass::Convex, &PsdMatrix::identity(4), 0.1, 0).unwrap();
        assert!(close(convex, 0.1 * 2f64.sqrt(), 1e-12));
        let singular = PsdMatrix::diagonal(&[1.0, 0.0]);
        assert!(matches!(
            delta_perimetric(SetClass::Convex, &singular, 0.1, 0),
            Err(Error::InvalidInput { .. })
        ));
        assert!(delta_perimetric(SetClass::Rectangles, &singular, 0.1, 0).is_err());
    }

    #[test]
    fn set_class_strings() {
        for s in ["convex", "rectangles", "lp_balls(inf)", "lp_balls(2)"] {
            let c: SetClass = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{s}\""));
        }
        assert_eq!("lp_balls:3".parse::<SetClass>().unwrap(), SetClass::LpBalls(PNorm::Finite(3.0)));
        assert!("balls".parse::<SetClass>().is_err());
        assert_eq!(KsClass::RectanglesHalfInfinite.to_string(), "rectangles_halfinfinite");
    }

    #[test]
    fn norm_ratios() {
        assert_eq!(norm_ratio(9, PNorm::INF, PNorm::TWO), 3.0);
        assert_eq!(norm_ratio(9, PNorm::TWO, PNorm::INF), 1.0);
        assert_eq!(norm_ratio(16, PNorm::Finite(4.0), PNorm::TWO), 2.0);
    }

    #[test]
    fn bootstrap_term_example() {
        // s = 0.1, d = 2, p = ∞, η = 1: 4 e^{−50}
        let sigma = PsdMatrix::identity(2);
        let hat = PsdMatrix::diagonal(&[1.21, 1.0]);
        let per = Perimetric::new(SetClass::Rectangles, &sigma, 0).unwrap();
        let m = MomentInputs::new(2, PNorm::INF);
        let r = bootstrap_bound(&m, &sigma, &hat, &per, &[1.0]).unwrap();
        assert!(close(r.sqrt_difference.unwrap(), 0.1, 1e-12));
        assert!(close(r.bootstrap_term, 4.0 * (-50f64).exp(), 1e-9));
        let same = bootstrap_bound(&m, &sigma, &sigma, &per, &[1.0]).unwrap();
        assert_eq!(same.bootstrap_term, 0.0);
    }

    #[test]
    fn two_sample_ks_small() {
        assert_eq!(two_sample_ks(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(two_sample_ks(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert!((two_sample_ks(&[1.0, 3.0], &[2.0, 4.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quantile_of_zero_covariance_is_zero() {
        let q = lp_quantile_bootstrap(&PsdMatrix::zeros(3), PNorm::TWO, 0.9, 200, 1).unwrap();
        assert_eq!(q, 0.0);
        assert!(lp_quantile_bootstrap(&PsdMatrix::zeros(3), PNorm::TWO, 0.9, 50, 1).is_err());
    }

    #[test]
    fn rectangle_levels_match_normal_cdf() {
        let levels = Levels::new(&PsdMatrix::identity(1));
        for (k, z) in levels.z.iter().enumerate() {
            let err = (normal_cdf(*z) - (k + 1) as f64 / 200.0).abs();
            assert!(err < 1e-11, "{k} {err}");
        }
    }

    proptest! {
        #[test]
        fn gamma_homogeneous(beta in 0.0f64..1e4, omega in 0.0f64..1e3, eta in 0.01f64..1e3, d in 1usize..50) {
            let m = MomentInputs::new(d, PNorm::INF).with_beta2(beta).with_omega(omega);
            for c in [0.5, 2.0] {
                let scaled = m.clone().with_beta2(beta * c * c * c).with_omega(omega * c * c);
                let a = gamma_p(&m, eta).unwrap();
                let b = gamma_p(&scaled, c * eta).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
            }
        }

        #[test]
        fn bootstrap_adds_nonnegative_terms(beta in 0.0f64..10.0, eta in 0.01f64..10.0, e in 0.0f64..0.5) {
            let sigma = PsdMatrix::identity(3);
            let hat = PsdMatrix::diagonal(&[1.0 + e, 1.0, 1.0 - e]);
            let per = Perimetric::new(SetClass::Rectangles, &sigma, 0).unwrap();
            let m = MomentInputs::new(3, PNorm::INF).with_beta2(beta);
            let clt = clt_bound(std::slice::from_ref(&m), &per, &[eta]).unwrap();
            let boot = bootstrap_bound(&m, &sigma, &hat, &per, &[eta]).unwrap();
            prop_assert!(boot.total >= clt.total);
            prop_assert!(boot.sqrt_difference.unwrap() <= boot.sqrt_difference_relaxed.unwrap() + 1e-12);
        }
    }
}
