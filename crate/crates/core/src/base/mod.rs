//! Base algorithms wrapped by the balance machinery, and the coefficient
//! selectors used as baselines.

pub mod critics;
pub mod cql;
pub mod iql;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::space::BalanceSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Iql,
    Awac,
    Cql,
}

impl FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iql" => Ok(Algo::Iql),
            "awac" => Ok(Algo::Awac),
            "cql" => Ok(Algo::Cql),
            _ => Err(Error::config("run.algo", format!("unknown algorithm `{s}` (iql, awac, cql)"))),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Iql => "iql",
            Algo::Awac => "awac",
            Algo::Cql => "cql",
        })
    }
}

/// How the coefficient of each sample is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BalanceMode {
    /// Uniform offline, balance model online.
    Famo2o,
    /// The same constant in both phases; no balance model.
    Fixed(f64),
    /// Uniform offline, uniform per sample online.
    Random,
    /// Lower bound offline, then a linear ramp to the upper bound online.
    Anneal,
}

impl FromStr for BalanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "famo2o" => Ok(BalanceMode::Famo2o),
            "random" => Ok(BalanceMode::Random),
            "anneal" => Ok(BalanceMode::Anneal),
            _ => match s.strip_prefix("fixed:") {
                Some(v) => v
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|b| b.is_finite())
                    .map(BalanceMode::Fixed)
                    .ok_or_else(|| Error::config("run.balance", format!("bad fixed coefficient `{v}`"))),
                None => Err(Error::config(
                    "run.balance",
                    format!("unknown balance mode `{s}` (famo2o, fixed:<beta>, random, anneal)"),
                )),
            },
        }
    }
}

impl fmt::Display for BalanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BalanceMode::Famo2o => f.write_str("famo2o"),
            BalanceMode::Fixed(b) => write!(f, "fixed:{b}"),
            BalanceMode::Random => f.write_str("random"),
            BalanceMode::Anneal => f.write_str("anneal"),
        }
    }
}

impl Serialize for BalanceMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BalanceMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Linear schedule over the online phase: `beta_min` at step 0, `beta_max` at
/// step `n_online - 1`.
pub fn anneal_beta(space: &BalanceSpace, online_step: usize, n_online: usize) -> f64 {
    if n_online <= 1 {
        return space.beta_max;
    }
    let frac = (online_step.min(n_online - 1)) as f64 / (n_online - 1) as f64;
    space.beta_min + (space.beta_max - space.beta_min) * frac
}

/// One run per coefficient in a fixed-β sweep.
pub fn fixed_sweep(betas: &[f64]) -> Vec<BalanceMode> {
    betas.iter().map(|&b| BalanceMode::Fixed(b)).collect()
}
