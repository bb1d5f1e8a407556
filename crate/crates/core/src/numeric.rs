//! Scalar numerics shared across modules: error function, normal law,
//! compensated summation and empirical quantiles.

use statrs::function::erf::erfc_inv;

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, polished by one Newton step.
pub fn normal_quantile(p: f64) -> f64 {
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    let dens = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if dens < 1e-300 {
        return x;
    }
    // residual taken in the smaller tail to avoid cancellation
    let r = if x < 0.0 { normal_cdf(x) - p } else { (1.0 - p) - normal_cdf(-x) };
    x - r / dens
}

/// `Φ(b) − Φ(a)` without cancellation in either tail.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        // both in the upper tail
        0.5 * (erfc(a / std::f64::consts::SQRT_2) - erfc(b / std::f64::consts::SQRT_2))
    } else if b <= 0.0 {
        0.5 * (erfc(-b / std::f64::consts::SQRT_2) - erfc(-a / std::f64::consts::SQRT_2))
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

/// `∫_a^b e^{-t²} dt` through erf/erfc differences.
pub fn gauss_integral(a: f64, b: f64) -> f64 {
    let half_sqrt_pi = 0.5 * std::f64::consts::PI.sqrt();
    if a >= 0.0 {
        half_sqrt_pi * (erfc(a) - erfc(b))
    } else if b <= 0.0 {
        half_sqrt_pi * (erfc(-b) - erfc(-a))
    } else {
        half_sqrt_pi * (erf(b) - erf(a))
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Double-double accumulator (Ogita–Rump–Oishi style).
#[derive(Debug, Default, Clone, Copy)]
pub struct Compensated {
    hi: f64,
    lo: f64,
}

impl Compensated {
    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        self.hi = s;
        self.lo += e;
    }

    pub fn add_product(&mut self, a: f64, b: f64) {
        let (p, pe) = two_prod(a, b);
        let (s, se) = two_sum(self.hi, p);
        self.hi = s;
        self.lo += pe + se;
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// Inverted-ECDF quantile: the smallest sample value `t` with
/// `#{x ≤ t} / n ≥ level`. `sorted` must be ascending and nonempty.
pub fn ecdf_quantile(sorted: &[f64], level: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let n = sorted.len();
    let rank = (level * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn sort_floats(values: &mut [f64]) {
    values.sort_by(f64::total_cmp);
}

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `n` points evenly spaced on `[lo, hi]` (inclusive).
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// `n` points log-evenly spaced on `[lo, hi]`; both ends positive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo.ln(), hi.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_and_quantile_agree() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        for &p in &[1e-10, 0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-13 * p.max(1e-3) * 1e3);
        }
    }

    #[test]
    fn gauss_integral_full_line_is_sqrt_pi() {
        let v = gauss_integral(-40.0, 40.0);
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-14);
        // far upper tail keeps relative accuracy
        let t = gauss_integral(10.0, f64::INFINITY);
        let asympt = (-100.0f64).exp() / 20.0 * (1.0 - 1.0 / 200.0);
        assert!((t / asympt - 1.0).abs() < 1e-3);
    }

    #[test]
    fn compensated_dot_beats_cancellation() {
        let mut acc = Compensated::default();
        acc.add(1e16);
        acc.add(1.0);
        acc.add(-1e16);
        assert_eq!(acc.value(), 1.0);
    }

    #[test]
    fn ecdf_quantile_is_inverted_ecdf() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ecdf_quantile(&xs, 0.25), 1.0);
        assert_eq!(ecdf_quantile(&xs, 0.26), 2.0);
        assert_eq!(ecdf_quantile(&xs, 1.0), 4.0);
        assert_eq!(ecdf_quantile(&xs, 0.0), 1.0);
    }
}
