//! Continuous 2-d point mass that should drive itself to a goal.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::Rng;

pub const POS_BOUND: f64 = 1.0;
pub const ACTION_BOUND: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMassSpec {
    pub goal: [f64; 2],
    pub goal_tolerance: f64,
    pub max_episode_steps: usize,
}

impl Default for PointMassSpec {
    fn default() -> Self {
        Self {
            goal: [1.0, 1.0],
            goal_tolerance: 0.05,
            max_episode_steps: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointStep {
    pub next: [f64; 2],
    pub reward: f64,
    pub terminal: bool,
    pub action_clamped: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl PointMassSpec {
    pub fn step(&self, state: [f64; 2], action: [f64; 2]) -> PointStep {
        let mut clamped = false;
        let mut next = [0.0; 2];
        for i in 0..2 {
            let a = if action[i].is_nan() { 0.0 } else { action[i] };
            let ac = a.clamp(-ACTION_BOUND, ACTION_BOUND);
            clamped |= ac != action[i];
            next[i] = (state[i] + ac).clamp(-POS_BOUND, POS_BOUND);
        }
        let d = dist(next, self.goal);
        PointStep {
            next,
            reward: -d,
            terminal: d <= self.goal_tolerance,
            action_clamped: clamped,
        }
    }

    /// Straight-line controller toward the goal, saturated at the action box.
    pub fn greedy_action(&self, state: [f64; 2]) -> [f64; 2] {
        [
            (self.goal[0] - state[0]).clamp(-ACTION_BOUND, ACTION_BOUND),
            (self.goal[1] - state[1]).clamp(-ACTION_BOUND, ACTION_BOUND),
        ]
    }

    /// Fixed evaluation starts.
    pub fn eval_starts(&self) -> Vec<[f64; 2]> {
        vec![[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [0.0, 0.0]]
    }

    pub fn rollout<F: FnMut([f64; 2]) -> Result<[f64; 2]>>(&self, start: [f64; 2], mut policy: F) -> Result<(f64, usize)> {
        let mut s = start;
        let mut ret = 0.0;
        for t in 0..self.max_episode_steps {
            let st = self.step(s, policy(s)?);
            ret += st.reward;
            s = st.next;
            if st.terminal {
                return Ok((ret, t + 1));
            }
        }
        Ok((ret, self.max_episode_steps))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMove {
    pub episode: u64,
    pub t: usize,
    pub state: [f64; 2],
    pub action: [f64; 2],
    pub reward: f64,
    pub next: [f64; 2],
    pub terminal: bool,
}

/// Even episodes follow the greedy controller with Gaussian action noise,
/// odd episodes act uniformly at random. Starts are uniform in the box.
pub fn collect_pointmass_dataset(spec: &PointMassSpec, n_episodes: usize, noise_std: f64, rng: &mut Rng) -> Vec<PointMove> {
    let noise = Normal::new(0.0, noise_std.max(1e-12)).expect("finite std");
    let mut out = Vec::new();
    for ep in 0..n_episodes {
        let mut s = [rng.random_range(-POS_BOUND..POS_BOUND), rng.random_range(-POS_BOUND..POS_BOUND)];
        for t in 0..spec.max_episode_steps {
            let a = if ep % 2 == 0 {
                let g = spec.greedy_action(s);
                [
                    (g[0] + noise.sample(rng)).clamp(-ACTION_BOUND, ACTION_BOUND),
                    (g[1] + noise.sample(rng)).clamp(-ACTION_BOUND, ACTION_BOUND),
                ]
            } else {
                [
                    rng.random_range(-ACTION_BOUND..ACTION_BOUND),
                    rng.random_range(-ACTION_BOUND..ACTION_BOUND),
                ]
            };
            let st = spec.step(s, a);
            out.push(PointMove {
                episode: ep as u64,
                t,
                state: s,
                action: a,
                reward: st.reward,
                next: st.next,
                terminal: st.terminal,
            });
            s = st.next;
            if st.terminal {
                break;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_action_at_goal() {
        let spec = PointMassSpec::default();
        let st = spec.step([1.0, 1.0], [0.0, 0.0]);
        assert!(st.reward.abs() <= 0.05);
        assert!(st.terminal);
    }

    #[test]
    fn arithmetic_step() {
        let spec = PointMassSpec::default();
        let st = spec.step([0.0, 0.0], [0.1, 0.0]);
        assert_eq!(st.next, [0.1, 0.0]);
        assert_eq!(st.reward, -(0.9f64 * 0.9 + 1.0).sqrt());
        assert!(!st.terminal);
    }

    #[test]
    fn out_of_box_action_clamped() {
        let spec = PointMassSpec::default();
        let st = spec.step([0.0, 0.0], [0.5, -0.3]);
        assert!(st.action_clamped);
        assert_eq!(st.next, [0.1, -0.1]);
        let st = spec.step([0.99, 0.0], [0.05, 0.0]);
        assert_eq!(st.next[0], 1.0);
    }

    #[test]
    fn greedy_reaches_goal_in_closed_form_steps() {
        let spec = PointMassSpec::default();
        let d = 8f64.sqrt();
        let bound = (d / (0.1 * 2f64.sqrt())).ceil() as usize;
        let (_, steps) = spec.rollout([-1.0, -1.0], |s| Ok(spec.greedy_action(s))).unwrap();
        assert!(steps <= bound, "{steps} > {bound}");
    }
}
