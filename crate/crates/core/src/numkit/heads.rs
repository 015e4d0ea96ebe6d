//! Stochastic policy heads on top of raw network outputs.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const ATANH_CLIP: f64 = 1.0 - 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Softmax over the last axis of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Categorical head over a finite action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SoftmaxHead {
    pub n_actions: usize,
}

impl SoftmaxHead {
    pub fn probs(&self, logits: &[f64]) -> Vec<f64> {
        softmax(logits)
    }

    /// log p(a) and its gradient with respect to the logits (`onehot(a) - p`).
    pub fn log_prob_grad(&self, logits: &[f64], action: usize) -> (f64, Vec<f64>) {
        let lp = log_softmax(logits);
        let grad = lp
            .iter()
            .enumerate()
            .map(|(k, l)| if k == action { 1.0 - l.exp() } else { -l.exp() })
            .collect();
        (lp[action], grad)
    }
}

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let softplus = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Diagonal Gaussian in pre-squash space, pushed through `tanh` and mapped
/// affinely onto the box `[low, high]`.
///
/// Raw network outputs are laid out as `[mean_0..mean_d, log_std_0..log_std_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    low: Vec<f64>,
    high: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub action: Vec<f64>,
    pub pre_tanh: Vec<f64>,
    pub log_prob: f64,
}

/// Gradients of a reparameterised sample with respect to the raw outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleJacobian {
    /// d action_i / d mean_i
    pub d_action_d_mean: Vec<f64>,
    /// d action_i / d log_std_i (zero where the clamp is active)
    pub d_action_d_log_std: Vec<f64>,
    /// d log_prob / d mean_i
    pub d_logp_d_mean: Vec<f64>,
    /// d log_prob / d log_std_i
    pub d_logp_d_log_std: Vec<f64>,
}

impl GaussianHead {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() {
            return Err(Error::contract("gaussian head bounds must be non-empty and equal length"));
        }
        if low.iter().zip(&high).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::contract(format!("invalid action box {low:?}..{high:?}")));
        }
        Ok(Self { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn raw_dim(&self) -> usize {
        2 * self.dim()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    fn mid(&self, i: usize) -> f64 {
        0.5 * (self.low[i] + self.high[i])
    }

    fn half(&self, i: usize) -> f64 {
        0.5 * (self.high[i] - self.low[i])
    }

    fn check(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.raw_dim() {
            return Err(Error::contract(format!(
                "gaussian head expects {} raw outputs, got {}",
                self.raw_dim(),
                raw.len()
            )));
        }
        Ok(())
    }

    /// Clamped log-std and a mask that is 1 where the clamp is inactive.
    pub fn log_std(&self, raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        raw[d..]
            .iter()
            .map(|&l| {
                if l < LOG_STD_MIN {
                    (LOG_STD_MIN, 0.0)
                } else if l > LOG_STD_MAX {
                    (LOG_STD_MAX, 0.0)
                } else {
                    (l, 1.0)
                }
            })
            .unzip()
    }

    pub fn squash(&self, pre_tanh: &[f64]) -> Vec<f64> {
        pre_tanh
            .iter()
            .enumerate()
            .map(|(i, &u)| self.mid(i) + self.half(i) * u.tanh())
            .collect()
    }

    /// Deterministic action: the squashed mean.
    pub fn mode(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check(raw)?;
        Ok(self.squash(&raw[..self.dim()]))
    }

    /// Reparameterised sample `a = mid + half * tanh(mean + std * noise)`.
    pub fn sample(&self, raw: &[f64], noise: &[f64]) -> Result<SquashedSample> {
        self.check(raw)?;
        if noise.len() != self.dim() {
            return Err(Error::contract("noise dimension mismatch"));
        }
        let d = self.dim();
        let (log_std, _) = self.log_std(raw);
        let mut pre = Vec::with_capacity(d);
        let mut log_prob = 0.0;
        for i in 0..d {
            let u = raw[i] + log_std[i].exp() * noise[i];
            log_prob += -0.5 * noise[i] * noise[i] - log_std[i] - HALF_LN_2PI
                - self.half(i).ln()
                - log_one_minus_tanh_sq(u);
            pre.push(u);
        }
        Ok(SquashedSample {
            action: self.squash(&pre),
            pre_tanh: pre,
            log_prob,
        })
    }

    pub fn sample_jacobian(&self, raw: &[f64], noise: &[f64]) -> Result<SampleJacobian> {
        self.check(raw)?;
        let d = self.dim();
        let (log_std, mask) = self.log_std(raw);
        let mut jac = SampleJacobian {
            d_action_d_mean: vec![0.0; d],
            d_action_d_log_std: vec![0.0; d],
            d_logp_d_mean: vec![0.0; d],
            d_logp_d_log_std: vec![0.0; d],
        };
        for i in 0..d {
            let sigma = log_std[i].exp();
            let u = raw[i] + sigma * noise[i];
            let t = u.tanh();
            let da_du = self.half(i) * (1.0 - t * t);
            jac.d_action_d_mean[i] = da_du;
            jac.d_action_d_log_std[i] = da_du * sigma * noise[i] * mask[i];
            jac.d_logp_d_mean[i] = 2.0 * t;
            jac.d_logp_d_log_std[i] = (-1.0 + 2.0 * t * sigma * noise[i]) * mask[i];
        }
        Ok(jac)
    }

    /// Log-density of a given action (inverted through the squash) and its
    /// gradient with respect to the raw outputs.
    pub fn log_prob_grad(&self, raw: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(raw)?;
        let d = self.dim();
        if action.len() != d {
            return Err(Error::contract("action dimension mismatch"));
        }
        let (log_std, mask) = self.log_std(raw);
        let mut grad = vec![0.0; 2 * d];
        let mut lp = 0.0;
        for i in 0..d {
            let half = self.half(i);
            let y = ((action[i] - self.mid(i)) / half).clamp(-ATANH_CLIP, ATANH_CLIP);
            let u = y.atanh();
            let inv_var = (-2.0 * log_std[i]).exp();
            let diff = u - raw[i];
            lp += -0.5 * diff * diff * inv_var - log_std[i] - HALF_LN_2PI - (half * (1.0 - y * y)).ln();
            grad[i] = diff * inv_var;
            grad[d + i] = (diff * diff * inv_var - 1.0) * mask[i];
        }
        Ok((lp, grad))
    }

    pub fn log_prob(&self, raw: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.log_prob_grad(raw, action)?.0)
    }
}

/// Standard normal log-density, used by tests and diagnostics.
pub fn normal_log_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * PI).ln()
}
