use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use ylab::coupling::{
    corollary_bound, estimate_moments, optimize_bound, optimize_corollary, simplified_bound, BoundOrder,
    CorollaryKind, CouplingBound, MartingalePath, MomentEstimate, MomentInputs,
};
use ylab::dgp::{
    draw_loading, mixingale_zeta, simulate_factor, simulate_regression, FactorModelSpec, FactorRegime,
    LoadingLaw, RegressionData, RegressionDgpSpec, SigmaFn, WDependence,
};
use ylab::hdclt::{bootstrap_bound, clt_bound, default_eta_grid, ks_experiment, Perimetric, SetClass};
use ylab::kde::{min_eigen_report_with, KdeGrid, MinEigenRow};
use ylab::numeric::logspace;
use ylab::regression::{
    band_localpoly, band_series, fit_localpoly, fit_series, run_coverage, BandResult, CoverageSpec,
    LocalPolySpec, PartitionBasis, Pipeline,
};
use ylab::rng::tag;
use ylab::{PsdMatrix, Streams};

use crate::args::*;
use crate::output::{self, fmt_f64, Format};
use crate::CliError;

/// Encoded artifact plus the summary line.
pub struct Outcome {
    pub files: Vec<(Option<PathBuf>, Vec<u8>)>,
    pub summary: String,
}

fn need_seed(c: &Common) -> Result<u64, CliError> {
    c.seed
        .ok_or_else(|| CliError::usage("seed", "this command is stochastic and needs --seed"))
}

/// Tables default to CSV, single reports to JSON.
fn encode<T: Serialize>(c: &Common, value: &T, table: bool) -> Result<Vec<u8>, CliError> {
    let default = if table { Format::Csv } else { Format::Json };
    match Format::resolve(c.format, c.out.as_deref(), default) {
        Format::Json => output::to_json(value),
        Format::Csv if table => output::table_csv(
            serde_json::to_value(value)
                .map_err(|e| CliError::Io(e.to_string()))?
                .as_array()
                .map(Vec::as_slice)
                .unwrap_or_default(),
        ),
        Format::Csv => output::report_csv(value),
    }
}

fn single(c: &Common, bytes: Vec<u8>, summary: String) -> Outcome {
    Outcome {
        files: vec![(c.out.clone(), bytes)],
        summary,
    }
}

pub fn kde_eig(a: &KdeEigArgs) -> Result<Outcome, CliError> {
    let seed = need_seed(&a.common)?;
    let deltas = match (&a.delta_grid, a.delta.is_empty()) {
        (Some(span), _) => span.linear(),
        (None, false) => a.delta.clone(),
        (None, true) => return Err(CliError::usage("delta-grid", "give --delta-grid or --delta")),
    };
    let base = Streams::new(seed, tag::KDE);
    let jobs: Vec<(usize, usize)> = (0..a.h.len())
        .flat_map(|k| (0..deltas.len()).map(move |j| (k, j)))
        .collect();
    let rows: Vec<MinEigenRow> = jobs
        .par_iter()
        .map(|&(k, j)| {
            let grid = KdeGrid::new(a.a, a.h[k], deltas[j], a.n)?;
            min_eigen_report_with(&grid, a.resamples, &base.child(k as u64).child(j as u64))
        })
        .collect::<ylab::Result<_>>()?;
    let violations = rows.iter().filter(|r| r.lambda_min_exact > r.upper_bound).count();
    let bytes = encode(&a.common, &rows, true)?;
    Ok(single(
        &a.common,
        bytes,
        format!("kde-eig: {} rows, {violations} exact-vs-bound violations", rows.len()),
    ))
}

#[derive(Serialize)]
struct CouplingReport {
    kind: &'static str,
    #[serde(flatten)]
    bound: CouplingBound,
    inputs: MomentInputs,
}

fn corollary(kind: BoundKind) -> Option<CorollaryKind> {
    match kind {
        BoundKind::General => None,
        BoundKind::Mixingale => Some(CorollaryKind::Mixingale),
        BoundKind::Martingale => Some(CorollaryKind::Martingale),
        BoundKind::Independent => Some(CorollaryKind::Independent),
    }
}

pub fn coupling_bound(a: &CouplingBoundArgs) -> Result<Outcome, CliError> {
    let mut m = MomentInputs::new(a.d, a.p)
        .with_beta2(a.beta2)
        .with_pi3(a.pi3)
        .with_omega(a.omega)
        .with_zeta(a.zeta);
    if let Some(b3) = a.beta3 {
        m = m.with_beta3(b3);
    }
    let order = BoundOrder::from_int(a.order)?;
    let bound = match (corollary(a.kind), a.target, a.eta) {
        (None, Some(t), _) => optimize_bound(&m, t, order)?,
        (None, None, Some(eta)) => simplified_bound(&m, eta, order)?,
        (Some(k), Some(t), _) => optimize_corollary(k, &m, t, order)?,
        (Some(k), None, Some(eta)) => corollary_bound(k, &m, eta, order)?,
        (_, None, None) => return Err(CliError::usage("target", "give --target or --eta")),
    };
    let summary = format!(
        "coupling-bound: eta = {}, probability bound = {}",
        fmt_f64(bound.eta),
        fmt_f64(bound.probability_bound)
    );
    let report = CouplingReport {
        kind: match a.kind {
            BoundKind::General => "general",
            BoundKind::Mixingale => "mixingale",
            BoundKind::Martingale => "martingale",
            BoundKind::Independent => "independent",
        },
        bound,
        inputs: m,
    };
    let bytes = encode(&a.common, &report, false)?;
    Ok(single(&a.common, bytes, summary))
}

fn factor_spec(f: &FactorArgs) -> Result<FactorModelSpec, CliError> {
    let regime = match f.regime {
        Regime::Independent => FactorRegime::Independent,
        Regime::Martingale => FactorRegime::Martingale { theta: f.theta },
        Regime::Ar => FactorRegime::ArMixingale,
    };
    let mut spec = FactorModelSpec::new(f.d, f.m, regime);
    spec.noise = f.noise;
    spec.factor_noise_scale = f.factor_scale;
    spec.idiosyncratic_scale = f.idiosyncratic_scale;
    if f.regime == Regime::Ar {
        spec.ar_matrix = Some(DMatrix::identity(f.m, f.m) * f.ar_coef);
    }
    spec.validate()?;
    Ok(spec)
}

fn paths_csv(path: &MartingalePath) -> Result<Vec<u8>, CliError> {
    let (n, d) = path.increments.shape();
    let header: Vec<String> = std::iter::once("i".to_string())
        .chain((1..=d).map(|j| format!("X_{j}")))
        .collect();
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            std::iter::once((i + 1).to_string())
                .chain((0..d).map(|j| fmt_f64(path.increments[(i, j)])))
                .collect()
        })
        .collect();
    output::csv_bytes(&header, &rows)
}

#[derive(Serialize)]
struct FactorReport {
    regime: &'static str,
    corollary: CorollaryKind,
    n: usize,
    replicates: usize,
    target: f64,
    moments: MomentEstimate,
    /// Moment inputs after the model-implied adjustments.
    inputs: MomentInputs,
    bounds: Vec<CouplingBound>,
}

pub fn factor_demo(a: &FactorDemoArgs) -> Result<Outcome, CliError> {
    let seed = need_seed(&a.common)?;
    let mut spec = factor_spec(&a.model)?;
    if a.fixed_loading {
        spec.loading_law = LoadingLaw::Fixed(draw_loading(spec.d, spec.m, seed));
    }
    let paths = simulate_factor(&spec, a.model.n, a.replicates, seed)?;
    let est = estimate_moments(&paths, a.p, &Streams::new(seed, tag::MOMENTS))?;
    let mut inputs = est.inputs.clone();
    let (regime, kind) = match a.model.regime {
        Regime::Independent => {
            // Σ is the sum of the (constant) conditional variances
            inputs.omega_mean_norm = 0.0;
            ("independent", CorollaryKind::Independent)
        }
        Regime::Martingale => ("martingale", CorollaryKind::Martingale),
        Regime::Ar => {
            inputs.zeta = mixingale_zeta(&spec, a.model.n, a.p, a.c_bound)?;
            ("ar", CorollaryKind::Mixingale)
        }
    };
    if spec.symmetric_noise() {
        inputs = inputs.with_symmetric_increments();
    }
    let mut bounds = vec![optimize_corollary(kind, &inputs, a.target, BoundOrder::Second)?];
    if inputs.beta_p3.is_some() && inputs.pi3 == 0.0 {
        bounds.push(optimize_corollary(kind, &inputs, a.target, BoundOrder::Third)?);
    }
    let best = bounds.iter().map(|b| b.eta).fold(f64::INFINITY, f64::min);
    let report = FactorReport {
        regime,
        corollary: kind,
        n: a.model.n,
        replicates: a.replicates,
        target: a.target,
        moments: est,
        inputs,
        bounds,
    };
    let mut out = single(
        &a.common,
        encode(&a.common, &report, false)?,
        format!("factor-demo: {regime}, smallest eta at target {} is {}", a.target, fmt_f64(best)),
    );
    if let Some(p) = &a.paths_out {
        out.files.push((Some(p.clone()), paths_csv(&paths[0])?));
    }
    Ok(out)
}

fn regression_dgp(r: &RegressionArgs, n: usize, sigma: f64) -> Result<RegressionDgpSpec, CliError> {
    let sigma_fn = match r.sigma_shape {
        SigmaShape::Constant => SigmaFn::Constant(sigma),
        SigmaShape::Bump => SigmaFn::Bump(sigma),
    };
    let mut dgp = RegressionDgpSpec::new(n, r.mu, sigma_fn);
    dgp.noise = r.noise;
    if let Some(rho) = r.w_ar {
        dgp.w_dependence = WDependence::ArCopula(rho);
    }
    dgp.validate()?;
    Ok(dgp)
}

/// Reads the `w` and `y` columns (any case) of a CSV with a header row.
pub fn read_regression_csv(path: &Path) -> Result<RegressionData, CliError> {
    let bad = |reason: String| CliError::usage("data", format!("{}: {reason}", path.display()));
    let mut rd = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| bad(format!("no `{name}` column")))
    };
    let (cw, cy) = (col("w")?, col("y")?);
    let (mut w, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |c: usize| {
            rec.get(c)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}: {e}", i + 1)))
        };
        w.push(num(cw)?);
        y.push(num(cy)?);
    }
    Ok(RegressionData::new(w, y)?)
}

fn regression_csv(data: &RegressionData) -> Result<Vec<u8>, CliError> {
    let header = ["i", "W", "Y"].map(String::from);
    let rows: Vec<Vec<String>> = data
        .w
        .iter()
        .zip(&data.y)
        .enumerate()
        .map(|(i, (w, y))| vec![(i + 1).to_string(), fmt_f64(*w), fmt_f64(*y)])
        .collect();
    output::csv_bytes(&header, &rows)
}

#[derive(Serialize)]
struct BandMeta<'a> {
    estimator: &'a Pipeline,
    n: usize,
    seed: u64,
    q_tau: f64,
    tau: f64,
    bootstrap_draws: usize,
}

#[derive(Serialize)]
struct BandReport<'a> {
    #[serde(flatten)]
    meta: BandMeta<'a>,
    band: &'a BandResult,
}

/// `band.csv` → `band.meta.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

fn band_outcome(
    name: &str,
    c: &Common,
    pipeline: &Pipeline,
    n: usize,
    seed: u64,
    band: &BandResult,
) -> Result<Outcome, CliError> {
    let meta = BandMeta {
        estimator: pipeline,
        n,
        seed,
        q_tau: band.q_tau,
        tau: band.tau,
        bootstrap_draws: band.bootstrap_draws,
    };
    let summary = format!(
        "{name}: {} points, q_tau = {}",
        band.eval_grid.len(),
        fmt_f64(band.q_tau)
    );
    let files = match Format::resolve(c.format, c.out.as_deref(), Format::Csv) {
        Format::Json => vec![(c.out.clone(), output::to_json(&BandReport { meta, band })?)],
        Format::Csv => {
            let header = ["w", "mu_hat", "lower", "upper", "rho_hat"].map(String::from);
            let rows: Vec<Vec<String>> = (0..band.eval_grid.len())
                .map(|i| {
                    [band.eval_grid[i], band.mu_hat[i], band.lower[i], band.upper[i], band.rho_hat_diag[i]]
                        .map(fmt_f64)
                        .to_vec()
                })
                .collect();
            let mut files = vec![(c.out.clone(), output::csv_bytes(&header, &rows)?)];
            if let Some(out) = &c.out {
                files.push((Some(sidecar_path(out)), output::to_json(&meta)?));
            }
            files
        }
    };
    Ok(Outcome { files, summary })
}

fn band_data(
    io: &BandIo,
    dgp: &RegressionDgpSpec,
    seed: u64,
    files: &mut Vec<(Option<PathBuf>, Vec<u8>)>,
) -> Result<RegressionData, CliError> {
    let data = match &io.data {
        Some(p) => read_regression_csv(p)?,
        None => simulate_regression(dgp, seed)?,
    };
    if let Some(p) = &io.data_out {
        files.push((Some(p.clone()), regression_csv(&data)?));
    }
    Ok(data)
}

pub fn series_band(a: &SeriesBandArgs) -> Result<Outcome, CliError> {
    let seed = need_seed(&a.common)?;
    let dgp = regression_dgp(&a.reg, a.reg.n.unwrap_or(2000), a.reg.sigma.unwrap_or(1.0))?;
    let basis = PartitionBasis::new(a.k_cells, a.degree)?;
    let mut extra = Vec::new();
    let data = band_data(&a.io, &dgp, seed, &mut extra)?;
    let fit = fit_series(&data, basis)?;
    let band = band_series(&fit, a.reg.tau, &a.reg.grid.linear(), a.reg.draws, seed)?;
    let mut out = band_outcome("series-band", &a.common, &Pipeline::Series(basis), data.len(), seed, &band)?;
    out.files.extend(extra);
    Ok(out)
}

pub fn localpoly_band(a: &LocalpolyBandArgs) -> Result<Outcome, CliError> {
    let seed = need_seed(&a.common)?;
    let dgp = regression_dgp(&a.reg, a.reg.n.unwrap_or(5000), a.reg.sigma.unwrap_or(1.0))?;
    let lp = LocalPolySpec::new(a.gamma, a.h, a.kernel)?;
    let mut extra = Vec::new();
    let data = band_data(&a.io, &dgp, seed, &mut extra)?;
    let fit = fit_localpoly(&data, lp, &a.reg.grid.linear())?;
    let band = band_localpoly(&fit, a.reg.tau, a.reg.draws, seed)?;
    let mut out = band_outcome("localpoly-band", &a.common, &Pipeline::LocalPoly(lp), data.len(), seed, &band)?;
    out.files.extend(extra);
    Ok(out)
}

fn covariance(d: usize, diag: &[f64], rho: f64, param: &'static str) -> Result<PsdMatrix, CliError> {
    let diag = if diag.is_empty() { vec![1.0; d] } else { diag.to_vec() };
    if diag.len() != d {
        return Err(CliError::usage(param, format!("need {d} entries, got {}", diag.len())));
    }
    if diag.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(CliError::usage(param, "variances must be finite and nonnegative"));
    }
    let m = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            diag[i]
        } else {
            rho * (diag[i] * diag[j]).sqrt()
        }
    });
    Ok(PsdMatrix::new(m)?)
}

pub fn clt_bound_cmd(a: &CltBoundArgs) -> Result<Outcome, CliError> {
    if a.d == 0 {
        return Err(CliError::usage("d", "dimension must be positive"));
    }
    let seed = match a.set_class {
        SetClass::LpBalls(_) => need_seed(&a.common)?,
        _ => a.common.seed.unwrap_or(0),
    };
    let sigma = covariance(a.d, &a.sigma_diag, a.rho, "sigma-diag")?;
    let grid = match a.eta_grid {
        Some(s) if s.start > 0.0 && s.stop > 0.0 => logspace(s.start, s.stop, s.count),
        Some(_) => return Err(CliError::usage("eta-grid", "ends must be positive")),
        None => default_eta_grid(),
    };
    let m = MomentInputs::new(a.d, a.p.unwrap_or(a.set_class.native_norm()))
        .with_beta2(a.beta2)
        .with_omega(a.omega);
    let per = Perimetric::new(a.set_class, &sigma, seed)?;
    let report = if a.sigma_hat_diag.is_empty() {
        clt_bound(std::slice::from_ref(&m), &per, &grid)?
    } else {
        let hat = covariance(a.d, &a.sigma_hat_diag, a.rho, "sigma-hat-diag")?;
        bootstrap_bound(&m, &sigma, &hat, &per, &grid)?
    };
    let summary = format!(
        "clt-bound: {} total = {} at eta = {}",
        a.set_class,
        fmt_f64(report.total),
        fmt_f64(report.eta_star)
    );
    Ok(single(&a.common, encode(&a.common, &report, false)?, summary))
}

pub fn lp_ks(a: &LpKsArgs) -> Result<Outcome, CliError> {
    let seed = need_seed(&a.common)?;
    if a.model.regime == Regime::Ar {
        return Err(CliError::usage("regime", "lp-ks needs a martingale regime (independent or martingale)"));
    }
    let mut spec = factor_spec(&a.model)?;
    spec.loading_law = LoadingLaw::Fixed(draw_loading(spec.d, spec.m, seed));
    let paths = simulate_factor(&spec, a.model.n, a.replicates, seed)?;
    let exp = ks_experiment(&paths, a.class, a.mc_draws, &default_eta_grid(), seed)?;
    let summary = format!(
        "lp-ks: {} statistic = {} (se {}), bound = {}{}",
        a.class,
        fmt_f64(exp.ks.statistic),
        fmt_f64(exp.ks.se),
        fmt_f64(exp.bound.total),
        if exp.vacuous { " (vacuous)" } else { "" }
    );
    Ok(single(&a.common, encode(&a.common, &exp, false)?, summary))
}

#[derive(Serialize)]
struct CoverageOut {
    #[serde(flatten)]
    pipeline: Pipeline,
    n: usize,
    #[serde(flatten)]
    report: ylab::regression::CoverageReport,
}

pub fn coverage(a: &CoverageArgs) -> Result<Outcome, CliError> {
    let seed = need_seed(&a.common)?;
    let mut spec = match a.estimator {
        Estimator::Series => CoverageSpec::series_default(),
        Estimator::Localpoly => CoverageSpec::localpoly_default(),
    };
    let default_sigma = match spec.dgp.sigma_fn {
        SigmaFn::Constant(s) | SigmaFn::Bump(s) => s,
    };
    spec.dgp = regression_dgp(&a.reg, a.reg.n.unwrap_or(spec.dgp.n), a.reg.sigma.unwrap_or(default_sigma))?;
    spec.tau = a.reg.tau;
    spec.bootstrap_draws = a.reg.draws;
    spec.eval_grid = a.reg.grid.linear();
    if let Some(k) = a.datasets {
        spec.datasets = k;
    }
    spec.pipeline = match spec.pipeline {
        Pipeline::Series(b) => {
            if a.h.is_some() || a.gamma.is_some() || a.kernel.is_some() {
                return Err(CliError::usage("estimator", "--h, --gamma and --kernel apply to localpoly"));
            }
            Pipeline::Series(PartitionBasis::new(a.k_cells.unwrap_or(b.k_cells), a.degree.unwrap_or(b.degree))?)
        }
        Pipeline::LocalPoly(lp) => {
            if a.k_cells.is_some() || a.degree.is_some() {
                return Err(CliError::usage("estimator", "--k-cells and --degree apply to series"));
            }
            Pipeline::LocalPoly(LocalPolySpec::new(
                a.gamma.unwrap_or(lp.gamma),
                a.h.unwrap_or(lp.h),
                a.kernel.unwrap_or(lp.kernel),
            )?)
        }
    };
    let report = run_coverage(&spec, seed)?;
    let summary = format!(
        "coverage: {}/{} covered, {} (se {})",
        report.covered,
        report.datasets,
        fmt_f64(report.coverage),
        fmt_f64(report.se)
    );
    let out = CoverageOut {
        pipeline: spec.pipeline,
        n: spec.dgp.n,
        report,
    };
    Ok(single(&a.common, encode(&a.common, &out, false)?, summary))
}
