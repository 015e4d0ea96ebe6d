//! The universal policy, the balance model and their composition.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::datastore::transition::Action;
use crate::error::{Error, Result};
use crate::family::space::BalanceSpace;
use crate::numkit::encoding::BalanceEncoder;
use crate::numkit::heads::{argmax, softmax, GaussianHead, SoftmaxHead};
use crate::numkit::mlp::Mlp;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyHead {
    Softmax(SoftmaxHead),
    Gaussian(GaussianHead),
}

impl PolicyHead {
    pub fn raw_dim(&self) -> usize {
        match self {
            PolicyHead::Softmax(h) => h.n_actions,
            PolicyHead::Gaussian(g) => g.raw_dim(),
        }
    }

    /// Modal action of one row of raw outputs.
    pub fn mode(&self, raw: &[f64]) -> Result<Action> {
        match self {
            PolicyHead::Softmax(_) => Ok(Action::Discrete(argmax(raw))),
            PolicyHead::Gaussian(g) => Ok(Action::Continuous(g.mode(raw)?)),
        }
    }

    pub fn sample(&self, raw: &[f64], rng: &mut Rng) -> Result<Action> {
        match self {
            PolicyHead::Softmax(_) => {
                let p = softmax(raw);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, pk) in p.iter().enumerate() {
                    acc += pk;
                    if u < acc {
                        return Ok(Action::Discrete(k));
                    }
                }
                Ok(Action::Discrete(p.len() - 1))
            }
            PolicyHead::Gaussian(g) => {
                let noise: Vec<f64> = (0..g.dim()).map(|_| rng.sample(StandardNormal)).collect();
                Ok(Action::Continuous(g.sample(raw, &noise)?.action))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// π_u(a | s, enc(β)): an MLP over the state concatenated with the encoded coefficient.
#[derive(Debug, Clone)]
pub struct UniversalModel {
    pub net: Mlp,
    pub head: PolicyHead,
    pub space: BalanceSpace,
    pub state_dim: usize,
    encoder: BalanceEncoder,
}

impl UniversalModel {
    pub fn new(state_dim: usize, head: PolicyHead, space: BalanceSpace, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        space.validate()?;
        let mut dims = vec![state_dim + space.enc_dim];
        dims.extend_from_slice(hidden);
        dims.push(head.raw_dim());
        let mut net = Mlp::new(&dims, rng)?;
        net.scale_output_layer(0.1);
        Ok(Self {
            net,
            head,
            encoder: space.encoder(),
            space,
            state_dim,
        })
    }

    pub fn from_parts(net: Mlp, head: PolicyHead, space: BalanceSpace, state_dim: usize) -> Result<Self> {
        if net.input_dim() != state_dim + space.enc_dim || net.output_dim() != head.raw_dim() {
            return Err(Error::contract("universal model network does not match state/encoding/head sizes"));
        }
        Ok(Self {
            net,
            head,
            encoder: space.encoder(),
            space,
            state_dim,
        })
    }

    pub fn encoder(&self) -> &BalanceEncoder {
        &self.encoder
    }

    pub fn inputs(&self, obs: ArrayView2<f64>, betas: &[f64]) -> Result<Array2<f64>> {
        if obs.ncols() != self.state_dim || obs.nrows() != betas.len() {
            return Err(Error::contract("universal model input shape mismatch"));
        }
        let ds = self.state_dim;
        let mut x = Array2::zeros((obs.nrows(), ds + self.space.enc_dim));
        for (i, &b) in betas.iter().enumerate() {
            let mut row = x.row_mut(i);
            let row = row.as_slice_mut().unwrap();
            for (j, v) in obs.row(i).iter().enumerate() {
                row[j] = *v;
            }
            self.encoder.encode_into(b, &mut row[ds..]);
        }
        Ok(x)
    }

    pub fn raw(&self, s: &[f64], beta: f64) -> Result<Vec<f64>> {
        let x = self.inputs(ArrayView2::from_shape((1, s.len()), s).map_err(|e| Error::contract(e.to_string()))?, &[beta])?;
        Ok(self.net.forward_batch(x.view())?.row(0).to_vec())
    }

    pub fn raw_batch(&self, obs: ArrayView2<f64>, betas: &[f64]) -> Result<Array2<f64>> {
        self.net.forward_batch(self.inputs(obs, betas)?.view())
    }

    pub fn act_with_beta(&self, s: &[f64], beta: f64, mode: ActMode, rng: &mut Rng) -> Result<Action> {
        let raw = self.raw(s, beta)?;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("universal model output at beta {beta}: {raw:?}")));
        }
        match mode {
            ActMode::Deterministic => self.head.mode(&raw),
            ActMode::Stochastic => self.head.sample(&raw, rng),
        }
    }
}

/// π_b(β | s): tanh-Gaussian over one dimension mapped onto the balance space.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceModel {
    pub net: Mlp,
    pub head: GaussianHead,
    pub space: BalanceSpace,
}

impl BalanceModel {
    /// The output layer starts near zero, so every state initially gets a mode
    /// of `beta_init` (the midpoint when `None`) and pre-squash spread
    /// `exp(log_std_init)`.
    pub fn new(
        state_dim: usize,
        space: BalanceSpace,
        hidden: &[usize],
        beta_init: Option<f64>,
        log_std_init: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        space.validate()?;
        let mean_bias = match beta_init {
            None => 0.0,
            Some(b) if b > space.beta_min && b < space.beta_max => {
                let half = 0.5 * (space.beta_max - space.beta_min);
                ((b - space.midpoint()) / half).atanh()
            }
            Some(b) if space.beta_min == space.beta_max && b == space.beta_min => 0.0,
            Some(b) => return Err(Error::contract(format!("initial coefficient {b} must lie inside the balance space"))),
        };
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(2);
        let mut net = Mlp::new(&dims, rng)?;
        net.scale_output_layer(0.01);
        let last = net.layers_mut().last_mut().unwrap();
        last.bias[0] = mean_bias;
        last.bias[1] = log_std_init;
        Self::from_net(net, space)
    }

    pub fn from_net(net: Mlp, space: BalanceSpace) -> Result<Self> {
        if net.output_dim() != 2 {
            return Err(Error::contract("balance model must output mean and log-std"));
        }
        Ok(Self {
            net,
            head: GaussianHead::new(vec![space.beta_min], vec![space.beta_max])?,
            space,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn beta_mode(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>> {
        let raw = self.net.forward_batch(obs)?;
        raw.rows()
            .into_iter()
            .map(|r| Ok(self.head.mode(r.as_slice().unwrap())?[0]))
            .collect()
    }

    pub fn beta_sample(&self, obs: ArrayView2<f64>, noise: &[f64]) -> Result<Vec<f64>> {
        let raw = self.net.forward_batch(obs)?;
        raw.rows()
            .into_iter()
            .zip(noise)
            .map(|(r, &n)| Ok(self.head.sample(r.as_slice().unwrap(), &[n])?.action[0]))
            .collect()
    }

    pub fn beta(&self, s: &[f64], mode: ActMode, rng: &mut Rng) -> Result<f64> {
        let raw = self.net.forward(s)?;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("balance model output {raw:?}")));
        }
        let beta = match mode {
            ActMode::Deterministic => self.head.mode(&raw)?[0],
            ActMode::Stochastic => {
                let n: f64 = rng.sample(StandardNormal);
                self.head.sample(&raw, &[n])?.action[0]
            }
        };
        Ok(beta.clamp(self.space.beta_min, self.space.beta_max))
    }
}

/// Composite policy: `β_s = π_b(s)`, then `a = π_u(s, enc(β_s))`.
pub fn act(s: &[f64], u: &UniversalModel, b: &BalanceModel, mode: ActMode, rng: &mut Rng) -> Result<(Action, f64)> {
    let beta = b.beta(s, mode, rng)?;
    Ok((u.act_with_beta(s, beta, mode, rng)?, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn space() -> BalanceSpace {
        BalanceSpace::new(1.0, 5.0, 4).unwrap()
    }

    #[test]
    fn constant_balance_model() {
        let mut net = Mlp::zeros(&[3, 4, 2]).unwrap();
        // tanh(0.5) maps to 3 + 2 * tanh(0.5)
        net.layers_mut()[1].bias[0] = 0.5;
        net.layers_mut()[1].bias[1] = -5.0;
        let b = BalanceModel::from_net(net, space()).unwrap();
        let mut rng = seeded(0);
        for s in [[0.0, 1.0, 2.0], [5.0, -3.0, 0.1]] {
            let beta = b.beta(&s, ActMode::Deterministic, &mut rng).unwrap();
            assert!((beta - (3.0 + 2.0 * 0.5f64.tanh())).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_act_repeats() {
        let mut rng = seeded(1);
        let u = UniversalModel::new(3, PolicyHead::Softmax(SoftmaxHead { n_actions: 4 }), space(), &[8], &mut rng).unwrap();
        let b = BalanceModel::new(3, space(), &[8], None, -1.0, &mut rng).unwrap();
        let s = [0.3, -0.2, 0.9];
        let x = act(&s, &u, &b, ActMode::Deterministic, &mut seeded(5)).unwrap();
        let y = act(&s, &u, &b, ActMode::Deterministic, &mut seeded(6)).unwrap();
        assert_eq!(x, y);
    }
}
