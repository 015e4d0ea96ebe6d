//! Q and V networks with soft-updated target copies.

use ndarray::{s, Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::numkit::mlp::{Mlp, MlpGrads, Tape};
use crate::rng::Rng;

pub const DEFAULT_TARGET_RHO: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous { low, .. } => low.len(),
        }
    }
}

/// Minibatch actions: indices for discrete spaces, one row per sample otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchActions {
    Discrete(Vec<usize>),
    Continuous(Array2<f64>),
}

impl BatchActions {
    pub fn len(&self) -> usize {
        match self {
            BatchActions::Discrete(v) => v.len(),
            BatchActions::Continuous(a) => a.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn concat_cols(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(1), &[a, b]).expect("row counts agree")
}

/// Discrete: state -> one value per action. Continuous: (state, action) -> scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub net: Mlp,
    pub target: Mlp,
    pub space: ActionSpace,
    pub state_dim: usize,
}

impl QNetwork {
    pub fn new(state_dim: usize, space: ActionSpace, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let (input, output) = match &space {
            ActionSpace::Discrete(n) => (state_dim, *n),
            ActionSpace::Continuous { low, .. } => (state_dim + low.len(), 1),
        };
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let net = Mlp::new(&dims, rng)?;
        Ok(Self {
            target: net.clone(),
            net,
            space,
            state_dim,
        })
    }

    fn pick(&self, target: bool) -> &Mlp {
        if target {
            &self.target
        } else {
            &self.net
        }
    }

    /// All action values, discrete spaces only.
    pub fn q_all(&self, obs: ArrayView2<f64>, target: bool) -> Result<Array2<f64>> {
        match self.space {
            ActionSpace::Discrete(_) => self.pick(target).forward_batch(obs),
            ActionSpace::Continuous { .. } => Err(Error::contract("q_all needs a discrete action space")),
        }
    }

    pub fn q_sa(&self, obs: ArrayView2<f64>, actions: &BatchActions, target: bool) -> Result<Vec<f64>> {
        match actions {
            BatchActions::Discrete(a) => {
                let all = self.q_all(obs, target)?;
                Ok(a.iter().enumerate().map(|(i, &k)| all[[i, k]]).collect())
            }
            BatchActions::Continuous(a) => {
                let x = concat_cols(obs, a.view());
                Ok(self.pick(target).forward_batch(x.view())?.column(0).to_vec())
            }
        }
    }

    /// Values of continuous actions and dQ/da for each row.
    pub fn q_and_action_grad(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>, target: bool) -> Result<(Vec<f64>, Array2<f64>)> {
        let net = self.pick(target);
        let tape = net.forward_tape(concat_cols(obs, actions))?;
        let ones = Array2::ones((obs.nrows(), 1));
        let dx = net.input_grad(&tape, ones.view())?;
        Ok((tape.output.column(0).to_vec(), dx.slice(s![.., self.state_dim..]).to_owned()))
    }

    /// Forward tape of the online net for loss gradients.
    pub fn tape(&self, obs: ArrayView2<f64>, actions: &BatchActions) -> Result<Tape> {
        match actions {
            BatchActions::Discrete(_) => self.net.forward_tape(obs.to_owned()),
            BatchActions::Continuous(a) => self.net.forward_tape(concat_cols(obs, a.view())),
        }
    }

    /// Turns per-sample dLoss/dQ(s, a_i) into an upstream gradient for [`QNetwork::tape`].
    pub fn upstream(&self, actions: &BatchActions, dq: &[f64]) -> Array2<f64> {
        match (actions, &self.space) {
            (BatchActions::Discrete(a), ActionSpace::Discrete(n)) => {
                let mut up = Array2::zeros((a.len(), *n));
                for (i, &k) in a.iter().enumerate() {
                    up[[i, k]] = dq[i];
                }
                up
            }
            _ => Array2::from_shape_vec((dq.len(), 1), dq.to_vec()).unwrap(),
        }
    }

    pub fn soft_update(&mut self, rho: f64) {
        self.target.soft_update_from(&self.net, rho);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VNetwork {
    pub net: Mlp,
    pub target: Mlp,
}

impl VNetwork {
    pub fn new(state_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let net = Mlp::new(&dims, rng)?;
        Ok(Self { target: net.clone(), net })
    }

    pub fn values(&self, obs: ArrayView2<f64>, target: bool) -> Result<Vec<f64>> {
        let net = if target { &self.target } else { &self.net };
        Ok(net.forward_batch(obs)?.column(0).to_vec())
    }

    pub fn soft_update(&mut self, rho: f64) {
        self.target.soft_update_from(&self.net, rho);
    }
}

/// Mean squared TD error `mean (Q(s,a) - y)^2` and its gradient.
pub fn td_loss_grad(q: &QNetwork, obs: ArrayView2<f64>, actions: &BatchActions, targets: &[f64]) -> Result<(f64, MlpGrads)> {
    let tape = q.tape(obs, actions)?;
    let n = targets.len() as f64;
    let mut dq = Vec::with_capacity(targets.len());
    let mut loss = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let qi = match actions {
            BatchActions::Discrete(a) => tape.output[[i, a[i]]],
            BatchActions::Continuous(_) => tape.output[[i, 0]],
        };
        let e = qi - y;
        loss += e * e / n;
        dq.push(2.0 * e / n);
    }
    let up = q.upstream(actions, &dq);
    Ok((loss, q.net.backward(&tape, up.view())?.0))
}

/// `r + γ (1 - done) next_value`.
pub fn td_targets(rewards: &[f64], dones: &[bool], next_values: &[f64], gamma: f64) -> Array1<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(next_values)
        .map(|((&r, &d), &v)| if d { r } else { r + gamma * v })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn terminal_and_myopic_targets() {
        let t = td_targets(&[1.0, 2.0], &[true, false], &[50.0, 3.0], 0.9);
        assert_eq!(t.to_vec(), vec![1.0, 2.0 + 0.9 * 3.0]);
        let t = td_targets(&[1.0, 2.0], &[false, false], &[50.0, 3.0], 0.0);
        assert_eq!(t.to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn target_trail_with_unit_rate() {
        let mut rng = seeded(1);
        let mut q = QNetwork::new(3, ActionSpace::Discrete(2), &[4], &mut rng).unwrap();
        q.net = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
        assert_ne!(q.net, q.target);
        q.soft_update(1.0);
        assert_eq!(q.net, q.target);
    }

    #[test]
    fn soft_update_is_convex_combination() {
        let mut rng = seeded(2);
        let mut v = VNetwork::new(2, &[3], &mut rng).unwrap();
        let t0 = v.target.clone();
        v.net = Mlp::new(&[2, 3, 1], &mut rng).unwrap();
        v.soft_update(0.25);
        for ((t, a), b) in v.target.param_slices().iter().zip(t0.param_slices()).zip(v.net.param_slices()) {
            for j in 0..t.len() {
                assert!((t[j] - (0.75 * a[j] + 0.25 * b[j])).abs() < 1e-15);
            }
        }
    }
}
