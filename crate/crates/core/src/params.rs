use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the full parameter vector.
pub const N_PARAMS: usize = 13;

/// Canonical names, in vector order.
pub const PARAM_NAMES: [&str; N_PARAMS] =
    ["phi", "mu", "sigma", "psi0", "psi1", "psi2", "psi3", "gamma0", "gamma1", "gamma2", "gamma3", "kappa", "delta"];

/// Index of a component of the parameter vector
/// `(φ, μ, σ, ψ₀..ψ₃, γ₀..γ₃, κ, δ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ParamIndex {
    Phi,
    Mu,
    Sigma,
    Psi(usize),
    Gamma(usize),
    Kappa,
    Delta,
}

impl ParamIndex {
    pub fn position(self) -> usize {
        match self {
            ParamIndex::Phi => 0,
            ParamIndex::Mu => 1,
            ParamIndex::Sigma => 2,
            ParamIndex::Psi(c) => 3 + c,
            ParamIndex::Gamma(c) => 7 + c,
            ParamIndex::Kappa => 11,
            ParamIndex::Delta => 12,
        }
    }

    pub fn from_position(pos: usize) -> Option<ParamIndex> {
        Some(match pos {
            0 => ParamIndex::Phi,
            1 => ParamIndex::Mu,
            2 => ParamIndex::Sigma,
            3..=6 => ParamIndex::Psi(pos - 3),
            7..=10 => ParamIndex::Gamma(pos - 7),
            11 => ParamIndex::Kappa,
            12 => ParamIndex::Delta,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        PARAM_NAMES[self.position()]
    }
}

impl fmt::Display for ParamIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<ParamIndex> for String {
    fn from(p: ParamIndex) -> String {
        p.name().to_string()
    }
}

impl TryFrom<String> for ParamIndex {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for ParamIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        PARAM_NAMES
            .iter()
            .position(|n| *n == key)
            .and_then(ParamIndex::from_position)
            .ok_or_else(|| Error::InvalidParams(format!("unknown parameter name `{s}`")))
    }
}

/// Model parameters. Rates are per day; `kappa` is in days and the decay
/// exponent is `1 + delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub phi: f64,
    pub mu: f64,
    pub sigma: f64,
    pub psi: [f64; 4],
    pub gamma: [f64; 4],
    pub kappa: f64,
    pub delta: f64,
}

impl Params {
    /// Reference estimates for platform A.
    pub const PLATFORM_A: Params = Params {
        phi: 3.77e-1,
        mu: 1.19e-2,
        sigma: 7.43e-1,
        psi: [9.28e-4, 2.57e-4, 7.80e-3, 7.57e-2],
        gamma: [2.43e-2, 7.83e-3, 2.26e-1, 1.23],
        kappa: 1.18e-3,
        delta: 1.07e-1,
    };

    /// Reference estimates for platform B.
    pub const PLATFORM_B: Params = Params {
        phi: 2.74e-1,
        mu: 1.73e-2,
        sigma: 1.92,
        psi: [2.20e-3, 1.10e-4, 9.07e-3, 1.48e-1],
        gamma: [4.00e-2, 2.60e-3, 2.07e-1, 1.37],
        kappa: 2.27e-3,
        delta: 2.75e-1,
    };

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        let mut v = [0.0; N_PARAMS];
        v[0] = self.phi;
        v[1] = self.mu;
        v[2] = self.sigma;
        v[3..7].copy_from_slice(&self.psi);
        v[7..11].copy_from_slice(&self.gamma);
        v[11] = self.kappa;
        v[12] = self.delta;
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Params> {
        if v.len() != N_PARAMS {
            return Err(Error::InvalidParams(format!("expected {N_PARAMS} values, got {}", v.len())));
        }
        Ok(Params {
            phi: v[0],
            mu: v[1],
            sigma: v[2],
            psi: [v[3], v[4], v[5], v[6]],
            gamma: [v[7], v[8], v[9], v[10]],
            kappa: v[11],
            delta: v[12],
        })
    }

    pub fn get(&self, idx: ParamIndex) -> f64 {
        self.to_array()[idx.position()]
    }

    pub fn set(&mut self, idx: ParamIndex, value: f64) {
        let mut v = self.to_array();
        v[idx.position()] = value;
        *self = Params::from_slice(&v).expect("length is fixed");
    }

    /// All thirteen components strictly positive and finite.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in PARAM_NAMES.iter().zip(self.to_array()) {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} = {v} must be positive and finite")));
            }
        }
        Ok(())
    }

    /// Contagion effect `β_c = γ_c / ψ_c`.
    pub fn contagion(&self) -> [f64; 4] {
        std::array::from_fn(|c| self.gamma[c] / self.psi[c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_round_trip() {
        let p = Params::PLATFORM_A;
        assert_eq!(Params::from_slice(&p.to_array()).unwrap(), p);
        assert_eq!(p.get(ParamIndex::Gamma(3)), 1.23);
        assert_eq!(ParamIndex::Kappa.position(), 11);
        for pos in 0..N_PARAMS {
            let idx = ParamIndex::from_position(pos).unwrap();
            assert_eq!(idx.position(), pos);
            assert_eq!(idx.name().parse::<ParamIndex>().unwrap(), idx);
        }
        assert!("zeta".parse::<ParamIndex>().is_err());
    }

    #[test]
    fn validation_rejects_zero() {
        assert!(Params::PLATFORM_B.validate().is_ok());
        let mut p = Params::PLATFORM_B;
        p.set(ParamIndex::Gamma(1), 0.0);
        assert!(p.validate().is_err());
    }
}
