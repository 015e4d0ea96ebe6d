use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::mlp::{Mlp, MlpGrads};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a list of flat parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, group_sizes: &[usize]) -> Self {
        Self {
            config,
            first: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_mlp(config: AdamConfig, net: &Mlp) -> Self {
        let sizes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        Self::new(config, &sizes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moment_shapes(&self) -> Vec<usize> {
        self.first.iter().map(Vec::len).collect()
    }

    /// One descent step `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// Non-finite gradients reject the whole update and leave state untouched.
    pub fn update(&mut self, mut params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::contract(format!(
                "adam expects {} parameter groups, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != self.first[i].len() {
                return Err(Error::contract(format!("adam group {i}: shape mismatch")));
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("adam gradient".into()));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (gi, (p, g)) in params.iter_mut().zip(&grads).enumerate() {
            let m = &mut self.first[gi];
            let v = &mut self.second[gi];
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step_mlp(&mut self, net: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        self.update(net.param_slices_mut(), grads.slices())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        st.update(vec![&mut p], vec![&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_is_minus_lr_sign() {
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), &[1]);
        let mut w = [0.0];
        st.update(vec![&mut w], vec![&[1.0]]).unwrap();
        assert!((w[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn quadratic_converges() {
        // Independent scalar recursion of the same update rule.
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let (mut w_ref, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * (w_ref - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w_ref -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let mut st = AdamState::new(AdamConfig::with_lr(lr), &[1]);
        let mut w = [0.0];
        for _ in 0..100 {
            let g = [2.0 * (w[0] - 3.0)];
            st.update(vec![&mut w], vec![&g]).unwrap();
        }
        assert_eq!(w[0], w_ref);
        assert!((w[0] - 3.0).abs() < 0.2, "w = {}", w[0]);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut st = AdamState::new(AdamConfig::default(), &[2]);
        let mut p = vec![1.0, 1.0];
        let err = st.update(vec![&mut p], vec![&[f64::NAN, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(st.step_count(), 0);
        assert_eq!(p, vec![1.0, 1.0]);
    }
}
