//! Sinusoidal encoding of a scalar balance coefficient.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Encoder bound to a closed interval of admissible values.
///
/// Out-of-range inputs are clamped and counted instead of rejected, since
/// online samples can graze the bounds through rounding.
#[derive(Debug)]
pub struct BalanceEncoder {
    low: f64,
    high: f64,
    dim: usize,
    normalize: bool,
    clamped: AtomicU64,
}

impl Clone for BalanceEncoder {
    fn clone(&self) -> Self {
        Self {
            low: self.low,
            high: self.high,
            dim: self.dim,
            normalize: self.normalize,
            clamped: AtomicU64::new(self.clamp_count()),
        }
    }
}

impl BalanceEncoder {
    pub fn new(low: f64, high: f64, dim: usize) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::contract(format!("encoding dim must be even and positive, got {dim}")));
        }
        if !(low <= high) || !low.is_finite() || !high.is_finite() {
            return Err(Error::contract(format!("invalid balance interval [{low}, {high}]")));
        }
        Ok(Self {
            low,
            high,
            dim,
            normalize: false,
            clamped: AtomicU64::new(0),
        })
    }

    /// Encode `(beta - low) / (high - low)` instead of the raw value.
    pub fn normalized(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    fn position(&self, beta: f64) -> (f64, f64) {
        let b = if beta < self.low || beta > self.high || beta.is_nan() {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            if beta.is_nan() {
                self.low
            } else {
                beta.clamp(self.low, self.high)
            }
        } else {
            beta
        };
        if self.normalize && self.high > self.low {
            let w = self.high - self.low;
            ((b - self.low) / w, 1.0 / w)
        } else if self.normalize {
            (0.0, 0.0)
        } else {
            (b, 1.0)
        }
    }

    fn freq(&self, i: usize) -> f64 {
        1.0 / 10000f64.powf((2 * i) as f64 / self.dim as f64)
    }

    pub fn encode_into(&self, beta: f64, out: &mut [f64]) {
        let (p, _) = self.position(beta);
        for i in 0..self.dim / 2 {
            let x = p * self.freq(i);
            out[2 * i] = x.sin();
            out[2 * i + 1] = x.cos();
        }
    }

    pub fn encode(&self, beta: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.encode_into(beta, &mut out);
        out
    }

    /// Derivative of each encoded coordinate with respect to `beta`.
    /// Zero when `beta` was clamped.
    pub fn derivative(&self, beta: f64) -> Vec<f64> {
        let inside = beta >= self.low && beta <= self.high;
        let (p, scale) = self.position(beta);
        let mut out = vec![0.0; self.dim];
        if !inside {
            return out;
        }
        for i in 0..self.dim / 2 {
            let f = self.freq(i);
            let x = p * f;
            out[2 * i] = x.cos() * f * scale;
            out[2 * i + 1] = -x.sin() * f * scale;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_alternating() {
        let enc = BalanceEncoder::new(0.0, 5.0, 6).unwrap();
        assert_eq!(enc.encode(0.0), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn dim_two_is_unit_circle() {
        let enc = BalanceEncoder::new(-10.0, 10.0, 2).unwrap();
        for &b in &[-7.3, 0.4, 2.0, 9.9] {
            let v = enc.encode(b);
            assert_eq!(v, vec![f64::sin(b), f64::cos(b)]);
            assert!((v[0] * v[0] + v[1] * v[1] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn beta_three_dim_eight() {
        let enc = BalanceEncoder::new(1.0, 5.0, 8).unwrap();
        let v = enc.encode(3.0);
        let expected = [
            3f64.sin(),
            3f64.cos(),
            (3.0 / 10.0f64).sin(),
            (3.0 / 10.0f64).cos(),
            (3.0 / 100.0f64).sin(),
            (3.0 / 100.0f64).cos(),
            (3.0 / 1000.0f64).sin(),
            (3.0 / 1000.0f64).cos(),
        ];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn out_of_range_is_clamped_and_counted() {
        let enc = BalanceEncoder::new(1.0, 5.0, 4).unwrap();
        assert_eq!(enc.encode(7.0), enc.encode(5.0));
        assert_eq!(enc.clamp_count(), 1);
        assert_eq!(enc.encode(-1.0), enc.encode(1.0));
        assert_eq!(enc.clamp_count(), 2);
    }

    #[test]
    fn odd_dim_rejected() {
        assert!(BalanceEncoder::new(0.0, 1.0, 3).is_err());
        assert!(BalanceEncoder::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn derivative_matches_fd() {
        for normalize in [false, true] {
            let enc = BalanceEncoder::new(1.0, 5.0, 6).unwrap().normalized(normalize);
            let d = enc.derivative(2.7);
            let p = enc.encode(2.7 + 1e-6);
            let m = enc.encode(2.7 - 1e-6);
            for k in 0..6 {
                assert!(((p[k] - m[k]) / 2e-6 - d[k]).abs() < 1e-8);
            }
        }
    }
}
