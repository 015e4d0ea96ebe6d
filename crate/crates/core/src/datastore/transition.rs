use serde::{Deserialize, Serialize};

use crate::envs::maze::MazeMove;
use crate::envs::pointmass::PointMove;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(*i),
            Action::Continuous(_) => None,
        }
    }

    pub fn vector(&self) -> Option<&[f64]> {
        match self {
            Action::Discrete(_) => None,
            Action::Continuous(v) => Some(v),
        }
    }
}

/// One environment transition. Maze states are stored as `[row, col]`.
///
/// `done` marks a true terminal (goal reached), not a time-limit cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub episode: u64,
    pub t: usize,
    pub s: Vec<f64>,
    pub a: Action,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        let finite = self.s.iter().chain(&self.s_next).all(|v| v.is_finite())
            && self.r.is_finite()
            && self.a.vector().is_none_or(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::NonFinite(format!("transition (episode {}, t {})", self.episode, self.t)));
        }
        if self.s.len() != self.s_next.len() {
            return Err(Error::contract("state and next state differ in length"));
        }
        Ok(())
    }
}

impl From<&MazeMove> for Transition {
    fn from(m: &MazeMove) -> Self {
        Self {
            episode: m.episode,
            t: m.t,
            s: vec![m.state.0 as f64, m.state.1 as f64],
            a: Action::Discrete(m.action),
            r: m.reward,
            s_next: vec![m.next.0 as f64, m.next.1 as f64],
            done: m.terminal,
        }
    }
}

impl From<&PointMove> for Transition {
    fn from(m: &PointMove) -> Self {
        Self {
            episode: m.episode,
            t: m.t,
            s: m.state.to_vec(),
            a: Action::Continuous(m.action.to_vec()),
            r: m.reward,
            s_next: m.next.to_vec(),
            done: m.terminal,
        }
    }
}
