use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::encoding::BalanceEncoder;
use crate::rng::Rng;

/// Closed interval of balance coefficients plus the width of their encoding.
///
/// A degenerate interval (`beta_min == beta_max`) is allowed here and freezes
/// the coefficient; run configs insist on a proper interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceSpace {
    pub beta_min: f64,
    pub beta_max: f64,
    pub enc_dim: usize,
    pub normalize: bool,
}

impl Default for BalanceSpace {
    fn default() -> Self {
        Self {
            beta_min: 1.0,
            beta_max: 5.0,
            enc_dim: 8,
            normalize: false,
        }
    }
}

impl BalanceSpace {
    pub fn new(beta_min: f64, beta_max: f64, enc_dim: usize) -> Result<Self> {
        let space = Self {
            beta_min,
            beta_max,
            enc_dim,
            normalize: false,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min.is_finite() && self.beta_max.is_finite() && self.beta_min >= 0.0 && self.beta_min <= self.beta_max) {
            return Err(Error::contract(format!(
                "balance space [{}, {}] must satisfy 0 <= min <= max",
                self.beta_min, self.beta_max
            )));
        }
        if self.enc_dim == 0 || self.enc_dim % 2 != 0 {
            return Err(Error::contract(format!("enc_dim must be even and positive, got {}", self.enc_dim)));
        }
        Ok(())
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.beta_min + self.beta_max)
    }

    pub fn contains(&self, beta: f64) -> bool {
        beta >= self.beta_min && beta <= self.beta_max
    }

    pub fn encoder(&self) -> BalanceEncoder {
        BalanceEncoder::new(self.beta_min, self.beta_max, self.enc_dim)
            .expect("validated space")
            .normalized(self.normalize)
    }
}

/// I.i.d. uniform draws on `[beta_min, beta_max]`.
pub fn sample_offline_beta(space: &BalanceSpace, m: usize, rng: &mut Rng) -> Vec<f64> {
    let w = space.beta_max - space.beta_min;
    (0..m)
        .map(|_| (space.beta_min + w * rng.random::<f64>()).min(space.beta_max))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn degenerate_interval_is_constant() {
        let space = BalanceSpace::new(2.5, 2.5, 4).unwrap();
        assert!(sample_offline_beta(&space, 100, &mut seeded(1)).iter().all(|&b| b == 2.5));
    }

    #[test]
    fn draws_in_bounds() {
        let space = BalanceSpace::new(1.0, 5.0, 4).unwrap();
        assert!(sample_offline_beta(&space, 10_000, &mut seeded(2)).iter().all(|&b| space.contains(b)));
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(BalanceSpace::new(3.0, 1.0, 4).is_err());
        assert!(BalanceSpace::new(1.0, 3.0, 5).is_err());
        assert!(BalanceSpace::new(-1.0, 3.0, 4).is_err());
    }
}
