use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ylab::hdclt::{KsClass, SetClass};
use ylab::dgp::NoiseLaw;
use ylab::regression::Kernel;
use ylab::PNorm;

use crate::output::Format;

#[derive(Debug, Parser)]
#[command(name = "ylab", version, about = "Coupling bounds, dependence simulators and uniform bands")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimum eigenvalue of the KDE covariance against its upper bound.
    KdeEig(KdeEigArgs),
    /// Coupling probability bound at a given eta, or the smallest eta for a target.
    CouplingBound(CouplingBoundArgs),
    /// Simulated factor model: moment estimates and the matching coupling bound.
    FactorDemo(FactorDemoArgs),
    /// Uniform band for a partitioning series fit.
    SeriesBand(SeriesBandArgs),
    /// Uniform band for a local polynomial fit.
    LocalpolyBand(LocalpolyBandArgs),
    /// High-dimensional CLT bound for a set class.
    CltBound(CltBoundArgs),
    /// Monte Carlo Kolmogorov-Smirnov distance of factor-model sums next to the CLT bound.
    LpKs(LpKsArgs),
    /// Monte Carlo coverage of a uniform band.
    Coverage(CoverageArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed; required by every stochastic command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Follows a .json or .csv output extension; tables default to csv, reports to json.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

/// `start:stop:count`, inclusive of both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl FromStr for Span {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts[..] else {
            return Err(format!("expected start:stop:count, got `{s}`"));
        };
        let start: f64 = a.trim().parse().map_err(|e| format!("start `{a}`: {e}"))?;
        let stop: f64 = b.trim().parse().map_err(|e| format!("stop `{b}`: {e}"))?;
        let count: usize = c.trim().parse().map_err(|e| format!("count `{c}`: {e}"))?;
        if count == 0 || !start.is_finite() || !stop.is_finite() {
            return Err(format!("need finite ends and a positive count, got `{s}`"));
        }
        if count == 1 && start != stop {
            return Err(format!("a one-point span needs start = stop, got `{s}`"));
        }
        Ok(Span { start, stop, count })
    }
}

impl Span {
    pub fn linear(&self) -> Vec<f64> {
        ylab::numeric::linspace(self.start, self.stop, self.count)
    }
}

#[derive(Debug, Clone, Args)]
pub struct KdeEigArgs {
    /// Bandwidths, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub h: Vec<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub a: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub resamples: usize,
    /// Linearly spaced mesh spacings.
    #[arg(long, conflicts_with = "delta")]
    pub delta_grid: Option<Span>,
    /// Explicit mesh spacings, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub delta: Vec<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundKind {
    General,
    Mixingale,
    Martingale,
    Independent,
}

#[derive(Debug, Clone, Args)]
pub struct CouplingBoundArgs {
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value = "2")]
    pub p: PNorm,
    #[arg(long, default_value_t = 0.0)]
    pub beta2: f64,
    #[arg(long)]
    pub beta3: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub pi3: f64,
    #[arg(long, default_value_t = 0.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 0.0)]
    pub zeta: f64,
    /// Coupling order, 2 or 3.
    #[arg(long, default_value_t = 2)]
    pub order: u32,
    #[arg(long, value_enum, default_value_t = BoundKind::General)]
    pub kind: BoundKind,
    /// Smallest eta whose bound is at most this probability.
    #[arg(long, required_unless_present = "eta", conflicts_with = "eta")]
    pub target: Option<f64>,
    /// Evaluate the bound at this eta.
    #[arg(long)]
    pub eta: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Regime {
    Independent,
    Martingale,
    Ar,
}

#[derive(Debug, Clone, Args)]
pub struct FactorArgs {
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    /// Number of factors.
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = Regime::Martingale)]
    pub regime: Regime,
    /// ARCH weight of the martingale regime.
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    /// Autoregressive coefficient of the ar regime, `A = coef · I`.
    #[arg(long, default_value_t = 0.5)]
    pub ar_coef: f64,
    #[arg(long, default_value = "gaussian")]
    pub noise: NoiseLaw,
    #[arg(long, default_value_t = 1.0)]
    pub factor_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub idiosyncratic_scale: f64,
}

#[derive(Debug, Clone, Args)]
pub struct FactorDemoArgs {
    #[command(flatten)]
    pub model: FactorArgs,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[arg(long, default_value = "inf")]
    pub p: PNorm,
    #[arg(long, default_value_t = 0.1)]
    pub target: f64,
    /// Mixingale coefficient bound for the ar regime.
    #[arg(long, default_value_t = 1.0)]
    pub c_bound: f64,
    /// Keep one loading for all replicates.
    #[arg(long)]
    pub fixed_loading: bool,
    /// Writes replicate 0 as `i,X_1..X_d`.
    #[arg(long)]
    pub paths_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaShape {
    Constant,
    Bump,
}

#[derive(Debug, Clone, Args)]
pub struct RegressionArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// sin2pi, poly3, constant or constant:<c>.
    #[arg(long, default_value = "sin2pi")]
    pub mu: ylab::dgp::MuFn,
    /// Noise scale.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_enum, default_value_t = SigmaShape::Constant)]
    pub sigma_shape: SigmaShape,
    #[arg(long, default_value = "gaussian")]
    pub noise: NoiseLaw,
    /// AR(1) coefficient of a Gaussian copula for the regressors.
    #[arg(long)]
    pub w_ar: Option<f64>,
    #[arg(long, default_value_t = 0.95)]
    pub tau: f64,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// Evaluation points as start:stop:count.
    #[arg(long, default_value = "0.05:0.95:101")]
    pub grid: Span,
}

#[derive(Debug, Clone, Args)]
pub struct BandIo {
    /// Fit this `w,y` CSV instead of simulating.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Writes the simulated sample as `i,W,Y`.
    #[arg(long)]
    pub data_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SeriesBandArgs {
    #[command(flatten)]
    pub reg: RegressionArgs,
    #[arg(long, default_value_t = 10)]
    pub k_cells: usize,
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    #[command(flatten)]
    pub io: BandIo,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct LocalpolyBandArgs {
    #[command(flatten)]
    pub reg: RegressionArgs,
    #[arg(long, default_value_t = 0.1)]
    pub h: f64,
    #[arg(long, default_value_t = 1)]
    pub gamma: usize,
    #[arg(long, default_value = "epanechnikov")]
    pub kernel: Kernel,
    #[command(flatten)]
    pub io: BandIo,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct CltBoundArgs {
    /// convex, rectangles or lp_balls:<p>.
    #[arg(long)]
    pub set_class: SetClass,
    #[arg(long)]
    pub d: usize,
    /// Norm of the moment inputs; the class's own norm when absent.
    #[arg(long)]
    pub p: Option<PNorm>,
    /// Diagonal of Σ, comma separated; the identity when absent.
    #[arg(long, value_delimiter = ',')]
    pub sigma_diag: Vec<f64>,
    /// Common off-diagonal correlation of Σ.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Diagonal of an estimate of Σ; adds the bootstrap term.
    #[arg(long, value_delimiter = ',')]
    pub sigma_hat_diag: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub beta2: f64,
    #[arg(long, default_value_t = 0.0)]
    pub omega: f64,
    /// Log-spaced eta grid as start:stop:count.
    #[arg(long)]
    pub eta_grid: Option<Span>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct LpKsArgs {
    #[command(flatten)]
    pub model: FactorArgs,
    /// rectangles_halfinfinite or lp_balls:<p>.
    #[arg(long, default_value = "rectangles_halfinfinite")]
    pub class: KsClass,
    #[arg(long, default_value_t = 2000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 100_000)]
    pub mc_draws: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Estimator {
    Series,
    Localpoly,
}

#[derive(Debug, Clone, Args)]
pub struct CoverageArgs {
    #[arg(long, value_enum)]
    pub estimator: Estimator,
    #[command(flatten)]
    pub reg: RegressionArgs,
    #[arg(long)]
    pub datasets: Option<usize>,
    #[arg(long)]
    pub k_cells: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub gamma: Option<usize>,
    #[arg(long)]
    pub kernel: Option<Kernel>,
    #[command(flatten)]
    pub common: Common,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_parse() {
        let s: Span = "0.005:0.1:20".parse().unwrap();
        assert_eq!(s, Span { start: 0.005, stop: 0.1, count: 20 });
        assert_eq!(s.linear().len(), 20);
        assert!("1:2".parse::<Span>().is_err());
        assert!("1:2:0".parse::<Span>().is_err());
        assert!("1:2:1".parse::<Span>().is_err());
        assert!("a:2:3".parse::<Span>().is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
