use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The ℓᵖ index. `Infinity` is its own variant so that formulas switch on
/// it exactly rather than on a large float.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PNorm {
    Finite(f64),
    Infinity,
}

impl PNorm {
    pub const ONE: PNorm = PNorm::Finite(1.0);
    pub const TWO: PNorm = PNorm::Finite(2.0);
    pub const INF: PNorm = PNorm::Infinity;

    pub fn new(p: f64) -> Result<Self> {
        if p.is_infinite() && p > 0.0 {
            Ok(PNorm::Infinity)
        } else if p.is_finite() && p >= 1.0 {
            Ok(PNorm::Finite(p))
        } else {
            Err(Error::invalid("p", format!("need p in [1, inf], got {p}")))
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, PNorm::Infinity)
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            PNorm::Finite(p) => p,
            PNorm::Infinity => f64::INFINITY,
        }
    }

    /// `d^{1/p}`, equal to 1 for p = ∞.
    pub fn dim_root(&self, d: usize) -> f64 {
        match *self {
            PNorm::Finite(p) => (d as f64).powf(1.0 / p),
            PNorm::Infinity => 1.0,
        }
    }
}

impl fmt::Display for PNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PNorm::Finite(p) => write!(f, "{p}"),
            PNorm::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for PNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(PNorm::Infinity),
            other => {
                let p: f64 = other
                    .parse()
                    .map_err(|_| Error::invalid("p", format!("cannot parse `{s}`")))?;
                PNorm::new(p)
            }
        }
    }
}

impl Serialize for PNorm {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            PNorm::Finite(p) => serializer.serialize_f64(p),
            PNorm::Infinity => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for PNorm {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        let parsed = match Repr::deserialize(deserializer)? {
            Repr::Num(p) => PNorm::new(p),
            Repr::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Dimension factor bounding `E‖Z‖_p` for standard Gaussian `Z ∈ R^d`:
/// `√(p d^{2/p})` for finite p and `√(2 log 2d)` for p = ∞.
pub fn phi_p(p: PNorm, d: usize) -> f64 {
    let d = d as f64;
    match p {
        PNorm::Finite(p) => (p * d.powf(2.0 / p)).sqrt(),
        PNorm::Infinity => (2.0 * (2.0 * d).ln()).sqrt(),
    }
}

pub fn lp_norm(v: &[f64], p: PNorm) -> f64 {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    match p {
        PNorm::Infinity => max,
        PNorm::Finite(p) if p == 1.0 => v.iter().map(|x| x.abs()).sum(),
        PNorm::Finite(p) if p == 2.0 => {
            if max == 0.0 {
                return 0.0;
            }
            max * v.iter().map(|x| (x / max).powi(2)).sum::<f64>().sqrt()
        }
        PNorm::Finite(p) => {
            if max == 0.0 {
                return 0.0;
            }
            max * v.iter().map(|x| (x.abs() / max).powf(p)).sum::<f64>().powf(1.0 / p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_examples() {
        assert!((phi_p(PNorm::ONE, 3) - 3.0).abs() < 1e-12);
        assert!((phi_p(PNorm::TWO, 4) - 8f64.sqrt()).abs() < 1e-12);
        assert!((phi_p(PNorm::INF, 2) - (2.0 * 4f64.ln()).sqrt()).abs() < 1e-12);
        assert!((phi_p(PNorm::INF, 2) - 1.6651).abs() < 1e-4);
    }

    #[test]
    fn phi_monotone_in_d() {
        for p in [PNorm::ONE, PNorm::TWO, PNorm::Finite(3.5), PNorm::INF] {
            let vals: Vec<f64> = (1..50).map(|d| phi_p(p, d)).collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]), "{p}");
        }
    }

    #[test]
    fn norm_examples() {
        assert_eq!(lp_norm(&[3.0, 4.0], PNorm::TWO), 5.0);
        assert_eq!(lp_norm(&[3.0, -4.0], PNorm::INF), 4.0);
        assert_eq!(lp_norm(&[1.0, 1.0, 1.0], PNorm::ONE), 3.0);
        assert!((lp_norm(&[1.0, 1.0], PNorm::Finite(3.0)) - 2f64.powf(1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(lp_norm(&[0.0, 0.0], PNorm::Finite(3.0)), 0.0);
    }

    #[test]
    fn parse_and_serde() {
        assert_eq!("inf".parse::<PNorm>().unwrap(), PNorm::Infinity);
        assert_eq!("2".parse::<PNorm>().unwrap(), PNorm::TWO);
        assert!("0.5".parse::<PNorm>().is_err());
        let s = serde_json::to_string(&[PNorm::TWO, PNorm::INF]).unwrap();
        assert_eq!(s, r#"[2.0,"inf"]"#);
        let back: Vec<PNorm> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![PNorm::TWO, PNorm::INF]);
    }
}
