//! Explicit tabular MDPs for the constrained-optimisation oracle.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Exp1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MIN_ENTRY: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StateWeighting {
    /// `(1 - γ) Σ_t γ^t Pr(s_t = s)` from a uniform initial distribution.
    #[default]
    Discounted,
    /// Stationary distribution of the behaviour chain.
    Stationary,
}

/// Row-major tensors: `p[(s * A + a) * S + s']`, `r[s * A + a]`, `behavior[s * A + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma: f64,
    pub behavior: Vec<f64>,
    pub d_behavior: Vec<f64>,
}

fn simplex_ok(row: &[f64]) -> bool {
    row.iter().all(|&v| v >= 0.0 && v.is_finite()) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

impl FiniteMdp {
    /// Builds an MDP and computes the behaviour state distribution.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p: Vec<f64>,
        r: Vec<f64>,
        gamma: f64,
        behavior: Vec<f64>,
        weighting: StateWeighting,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::contract("empty state or action set"));
        }
        if p.len() != n_states * n_actions * n_states || r.len() != n_states * n_actions || behavior.len() != n_states * n_actions {
            return Err(Error::contract("finite MDP tensor sizes do not match n_states/n_actions"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::contract(format!("gamma {gamma} outside [0, 1)")));
        }
        if !p.chunks(n_states).all(simplex_ok) {
            return Err(Error::contract("transition rows must be distributions"));
        }
        if !behavior.chunks(n_actions).all(simplex_ok) || behavior.iter().any(|&v| v <= 0.0) {
            return Err(Error::contract("behaviour policy must be a fully supported distribution"));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rewards".into()));
        }
        let mut mdp = Self {
            n_states,
            n_actions,
            p,
            r,
            gamma,
            behavior,
            d_behavior: vec![],
        };
        mdp.d_behavior = mdp.state_distribution(&mdp.behavior, weighting)?;
        Ok(mdp)
    }

    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.p[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.r[s * self.n_actions + a]
    }

    pub fn pi_b(&self, s: usize) -> &[f64] {
        &self.behavior[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// State-to-state transition matrix under `policy` (`S x A` row-major).
    pub fn policy_transition(&self, policy: &[f64]) -> DMatrix<f64> {
        let (ns, na) = (self.n_states, self.n_actions);
        DMatrix::from_fn(ns, ns, |s, s2| (0..na).map(|a| policy[s * na + a] * self.p(s, a, s2)).sum())
    }

    pub fn state_distribution(&self, policy: &[f64], weighting: StateWeighting) -> Result<Vec<f64>> {
        let ns = self.n_states;
        let pt = self.policy_transition(policy).transpose();
        let (m, rhs) = match weighting {
            StateWeighting::Discounted => (
                DMatrix::identity(ns, ns) - pt * self.gamma,
                DVector::from_element(ns, (1.0 - self.gamma) / ns as f64),
            ),
            StateWeighting::Stationary => {
                let mut m = DMatrix::identity(ns, ns) - pt;
                for j in 0..ns {
                    m[(ns - 1, j)] = 1.0;
                }
                let mut rhs = DVector::zeros(ns);
                rhs[ns - 1] = 1.0;
                (m, rhs)
            }
        };
        let d = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("state distribution".into()))?;
        Ok(d.iter().copied().collect())
    }
}

/// Dirichlet(1) draw lifted so every entry is at least `MIN_ENTRY`.
fn floored_simplex(n: usize, rng: &mut Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    let mass = 1.0 - n as f64 * MIN_ENTRY;
    raw.into_iter().map(|x| MIN_ENTRY + mass * x / total).collect()
}

pub fn random_finite_mdp(n_states: usize, n_actions: usize, gamma: f64, rng: &mut Rng) -> Result<FiniteMdp> {
    random_finite_mdp_with(n_states, n_actions, gamma, StateWeighting::Discounted, rng)
}

pub fn random_finite_mdp_with(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    weighting: StateWeighting,
    rng: &mut Rng,
) -> Result<FiniteMdp> {
    if !(2..=6).contains(&n_states) || !(2..=4).contains(&n_actions) {
        return Err(Error::contract(format!(
            "random MDPs need 2..=6 states and 2..=4 actions, got {n_states}x{n_actions}"
        )));
    }
    let mut p = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        p.extend(floored_simplex(n_states, rng));
    }
    let r = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    let mut behavior = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        behavior.extend(floored_simplex(n_actions, rng));
    }
    FiniteMdp::new(n_states, n_actions, p, r, gamma, behavior, weighting)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn rows_normalised_and_floored() {
        let mut rng = seeded(11);
        let mdp = random_finite_mdp(5, 3, 0.9, &mut rng).unwrap();
        for row in mdp.p.chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(mdp.behavior.iter().all(|&v| v >= 1e-3));
        assert!((mdp.d_behavior.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn visitation_residual() {
        let mut rng = seeded(12);
        let mdp = random_finite_mdp(4, 2, 0.9, &mut rng).unwrap();
        let pt = mdp.policy_transition(&mdp.behavior);
        for s2 in 0..4 {
            let flow: f64 = (0..4).map(|s| pt[(s, s2)] * mdp.d_behavior[s]).sum();
            let rhs = (1.0 - 0.9) / 4.0 + 0.9 * flow;
            assert!((mdp.d_behavior[s2] - rhs).abs() < 1e-8);
        }
    }

    #[test]
    fn stationary_is_fixed_point() {
        let mut rng = seeded(13);
        let mdp = random_finite_mdp_with(3, 2, 0.5, StateWeighting::Stationary, &mut rng).unwrap();
        let pt = mdp.policy_transition(&mdp.behavior);
        for s2 in 0..3 {
            let flow: f64 = (0..3).map(|s| pt[(s, s2)] * mdp.d_behavior[s]).sum();
            assert!((mdp.d_behavior[s2] - flow).abs() < 1e-10);
        }
    }

    #[test]
    fn size_limits() {
        let mut rng = seeded(0);
        assert!(random_finite_mdp(7, 2, 0.9, &mut rng).is_err());
        assert!(random_finite_mdp(2, 1, 0.9, &mut rng).is_err());
    }
}
